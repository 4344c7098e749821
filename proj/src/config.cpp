#include "adsy/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "adsy/errors.hpp"

extern char** environ;

namespace adsy {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

RunConfig::RunConfig() {
  values_ = {
      {"geometry.grid_rows", "2"},
      {"geometry.grid_cols", "3"},
      {"geometry.pitch", "32"},
      {"geometry.image", "128"},
      {"geometry.thickness", "0.25"},
      {"geometry.max_objects", "3"},

      {"data.records", "4000"},
      {"data.episode_len", "5"},
      {"data.split", "10/1/1"},
      {"data.seed", "1"},
      {"data.split_seed", "2"},

      {"model.crop", "32"},
      {"model.filters", "16,32,64,128"},
      {"model.code_bits", "8"},
      {"model.attn_layers", "4"},
      {"model.heads", "4"},
      {"model.attn_dim", "128"},
      {"model.ffn_dim", "512"},
      {"model.decoder_hidden", "256,256,256"},
      {"model.tau", "1.0"},

      {"train.lr", "1e-4"},
      {"train.batch", "32"},
      {"train.epochs", "100"},
      {"train.patience", "0"},  // 0 disables early stopping
      {"train.seed", "3"},

      {"forward.lr", "1e-4"},
      {"forward.batch", "32"},
      {"forward.epochs", "100"},
      {"forward.hidden", "128"},
      {"forward.heads", "4"},
      {"forward.seed", "4"},

      {"planner.max_depth", "3"},

      {"run.threads", "0"},  // 0 = all available
  };
}

RunConfig RunConfig::with_preset(const std::string& preset) {
  RunConfig cfg;
  if (preset == "desk" || preset.empty()) return cfg;
  if (preset == "paper") {
    cfg.set("geometry.pitch", "64");
    cfg.set("geometry.image", "256");
    cfg.set("data.records", "12000");
    cfg.set("data.split", "10000/1000/1000");
    cfg.set("model.crop", "64");
    cfg.set("model.filters", "64,128,256,512");
    return cfg;
  }
  throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const std::int64_t out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double RunConfig::get_real(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::vector<std::int64_t> RunConfig::get_int_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<std::int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(trim(item)));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects integers, got '" + v + "'");
    }
  }
  return out;
}

std::vector<double> RunConfig::get_real_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, '/')) {
    try {
      out.push_back(std::stod(trim(item)));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects numbers, got '" + v + "'");
    }
  }
  return out;
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("config file not found: " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::apply_env() {
  // ADSY_SECTION_REST maps to section.rest; only the first underscore is the
  // section separator (keys themselves may contain underscores).
  constexpr const char* prefix = "ADSY_";
  for (char** e = environ; *e; ++e) {
    const std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key = entry.substr(5, eq - 5);
    for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const auto us = key.find('_');
    if (us != std::string::npos) key[us] = '.';
    set(key, entry.substr(eq + 1));
  }
}

std::string RunConfig::to_string() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << "=" << v << "\n";
  return out.str();
}

void RunConfig::echo(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << to_string();
}

}  // namespace adsy
