#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace adsy {

// Flat key=value configuration covering every tunable of the pipeline.
// Sources are applied in order: defaults, preset, config file, ADSY_*
// environment variables, command-line overrides. Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig();  // desk-scale defaults

  static RunConfig with_preset(const std::string& preset);  // "desk" or "paper"

  void apply_file(const std::filesystem::path& path);
  void apply_env();  // ADSY_SECTION_KEY=value overrides section.key
  void set(const std::string& key, const std::string& value);  // throws on unknown key

  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;  // comma separated
  std::vector<double> get_real_list(const std::string& key) const;       // slash separated

  // Fully-resolved config, sorted by key, one key=value per line.
  void echo(const std::filesystem::path& path) const;
  std::string to_string() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace adsy
