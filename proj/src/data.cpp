#include "adsy/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "adsy/errors.hpp"
#include "adsy/rng.hpp"

namespace adsy {

namespace {

struct Episode {
  std::vector<InteractionRecord> records;
};

ActionId sample_valid_action(const WorldState& w, Rng& rng) {
  // reject-and-resample actions that would push a stick assembly off the grid
  while (true) {
    const int flat = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w.geom.num_actions())));
    const ActionId a = ActionId::from_flat(flat, w.geom.locations());
    if (action_valid(w, a)) return a;
  }
}

Episode run_episode(const GeometryConfig& geom, std::uint64_t master_seed, std::int64_t episode,
                    int steps) {
  Episode ep;
  const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(episode));
  Rng rng(seed);
  const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(geom.max_objects)));
  WorldState w = init_world(geom, derive_seed(seed, 0), k);
  for (int s = 0; s < steps; ++s) {
    InteractionRecord rec;
    rec.episode_id = static_cast<std::int32_t>(episode);
    rec.step = s;
    auto rendered = render(w);
    rec.image = std::move(rendered.depth);
    rec.masks = std::move(rendered.masks);
    rec.action = sample_valid_action(w, rng);
    auto [next, effects] = apply_action(w, rec.action);
    rec.effects = std::move(effects);
    ep.records.push_back(std::move(rec));
    w = std::move(next);
  }
  return ep;
}

}  // namespace

Dataset explore(const GeometryConfig& geom, std::uint64_t master_seed, std::int64_t num_records,
                int episode_len) {
  if (num_records <= 0) throw std::invalid_argument("explore: num_records must be positive");
  if (episode_len < 1) throw std::invalid_argument("explore: episode_len must be >= 1");
  const std::int64_t episodes = (num_records + episode_len - 1) / episode_len;
  std::vector<Episode> eps(static_cast<std::size_t>(episodes));
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t e = 0; e < episodes; ++e) {
    const std::int64_t remaining = num_records - e * episode_len;
    const int steps = static_cast<int>(std::min<std::int64_t>(episode_len, remaining));
    eps[static_cast<std::size_t>(e)] = run_episode(geom, master_seed, e, steps);
  }
  Dataset d;
  d.manifest.geom = geom;
  d.manifest.master_seed = master_seed;
  d.manifest.episode_len = episode_len;
  d.manifest.total_records = num_records;
  d.manifest.num_records = num_records;
  for (auto& ep : eps)
    for (auto& r : ep.records) d.records.push_back(std::move(r));
  return d;
}

std::array<Dataset, 3> split(const Dataset& d, double train, double val, double test,
                             std::uint64_t seed) {
  if (std::abs(train + val + test - 1.0) > 1e-9)
    throw ConfigError("split ratios must sum to 1, got " + std::to_string(train + val + test));
  if (train < 0 || val < 0 || test < 0) throw ConfigError("split ratios must be non-negative");

  // group record indices per episode, preserving step order
  std::vector<std::int32_t> episode_ids;
  std::map<std::int32_t, std::vector<std::size_t>> by_episode;
  for (std::size_t i = 0; i < d.records.size(); ++i) {
    const auto id = d.records[i].episode_id;
    if (!by_episode.count(id)) episode_ids.push_back(id);
    by_episode[id].push_back(i);
  }
  Rng rng(seed);
  for (std::size_t i = episode_ids.size(); i > 1; --i)
    std::swap(episode_ids[i - 1], episode_ids[static_cast<std::size_t>(rng.uniform_int(i))]);

  const double total = static_cast<double>(d.records.size());
  const double t1 = train * total;
  const double t2 = (train + val) * total;
  std::array<Dataset, 3> out;
  for (auto& part : out) {
    part.manifest = d.manifest;
    part.manifest.num_records = 0;
  }
  double placed = 0;
  for (const auto id : episode_ids) {
    const int part = placed < t1 ? 0 : (placed < t2 ? 1 : 2);
    for (auto idx : by_episode[id]) out[static_cast<std::size_t>(part)].records.push_back(d.records[idx]);
    placed += static_cast<double>(by_episode[id].size());
  }
  for (auto& part : out) {
    std::sort(part.records.begin(), part.records.end(),
              [](const InteractionRecord& a, const InteractionRecord& b) {
                return std::make_pair(a.episode_id, a.step) < std::make_pair(b.episode_id, b.step);
              });
    part.manifest.num_records = static_cast<std::int64_t>(part.records.size());
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'A', 'D', 'S', 'Y'};

struct ByteWriter {
  std::vector<std::uint8_t> buf;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f32(float v) { bytes(&v, 4); }
};

struct ByteReader {
  const std::uint8_t* p;
  std::size_t size;
  std::size_t pos = 0;
  void bytes(void* out, std::size_t n) {
    if (pos + n > size) throw FormatError("dataset truncated", pos);
    std::memcpy(out, p + pos, n);
    pos += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint16_t u16() { std::uint16_t v; bytes(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  std::int64_t i64() { std::int64_t v; bytes(&v, 8); return v; }
  float f32() { float v; bytes(&v, 4); return v; }
};

// Row-major run-length encoding of a binary mask.
std::vector<std::pair<std::uint32_t, std::uint32_t>> rle_encode(const std::vector<std::uint8_t>& m) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> runs;
  std::size_t i = 0;
  while (i < m.size()) {
    if (!m[i]) { ++i; continue; }
    std::size_t j = i;
    while (j < m.size() && m[j]) ++j;
    runs.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j - i));
    i = j;
  }
  return runs;
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kDatasetVersion);
  const auto& g = d.manifest.geom;
  w.u16(static_cast<std::uint16_t>(g.grid_rows));
  w.u16(static_cast<std::uint16_t>(g.grid_cols));
  w.u16(static_cast<std::uint16_t>(g.pitch));
  w.u16(static_cast<std::uint16_t>(g.image_h));
  w.u16(static_cast<std::uint16_t>(g.image_w));
  w.f32(g.level_thickness);
  w.u16(static_cast<std::uint16_t>(g.max_objects));
  w.u64(d.manifest.master_seed);
  w.u32(static_cast<std::uint32_t>(d.manifest.episode_len));
  w.i64(d.manifest.total_records);
  w.i64(static_cast<std::int64_t>(d.records.size()));

  for (const auto& r : d.records) {
    ByteWriter frame;
    frame.u32(static_cast<std::uint32_t>(r.episode_id));
    frame.u32(static_cast<std::uint32_t>(r.step));
    frame.u8(static_cast<std::uint8_t>(r.action.flat(g.locations())));
    frame.u16(static_cast<std::uint16_t>(r.masks.size()));
    for (std::int64_t i = 0; i < r.image.numel(); ++i) frame.f32(r.image[i]);
    for (std::size_t i = 0; i < r.masks.size(); ++i) {
      frame.u32(static_cast<std::uint32_t>(r.masks[i].id));
      frame.f32(r.effects[i].dx);
      frame.f32(r.effects[i].dy);
      frame.f32(r.effects[i].dz);
      const auto runs = rle_encode(r.masks[i].pixels);
      frame.u32(static_cast<std::uint32_t>(runs.size()));
      for (auto [start, len] : runs) {
        frame.u32(start);
        frame.u32(len);
      }
    }
    w.u32(static_cast<std::uint32_t>(frame.buf.size()));
    w.bytes(frame.buf.data(), frame.buf.size());
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("dataset not found: " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r{buf.data(), buf.size()};

  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad dataset magic", 0);
  const std::uint16_t version = r.u16();
  if (version != kDatasetVersion)
    throw FormatError("unsupported dataset version " + std::to_string(version), 4);

  Dataset d;
  auto& g = d.manifest.geom;
  g.grid_rows = r.u16();
  g.grid_cols = r.u16();
  g.pitch = r.u16();
  g.image_h = r.u16();
  g.image_w = r.u16();
  g.level_thickness = r.f32();
  g.max_objects = r.u16();
  d.manifest.master_seed = r.u64();
  d.manifest.episode_len = static_cast<std::int32_t>(r.u32());
  d.manifest.total_records = r.i64();
  d.manifest.num_records = r.i64();

  for (std::int64_t rec_i = 0; rec_i < d.manifest.num_records; ++rec_i) {
    const std::size_t frame_at = r.pos;
    const std::uint32_t frame_len = r.u32();
    if (r.pos + frame_len > r.size) throw FormatError("dataset record overruns file", frame_at);
    const std::size_t frame_end = r.pos + frame_len;

    InteractionRecord rec;
    rec.episode_id = static_cast<std::int32_t>(r.u32());
    rec.step = static_cast<std::int32_t>(r.u32());
    rec.action = ActionId::from_flat(r.u8(), g.locations());
    const std::uint16_t k = r.u16();
    rec.image = Tensor<float>(Shape{g.image_h, g.image_w});
    for (std::int64_t i = 0; i < rec.image.numel(); ++i) rec.image[i] = r.f32();
    for (int i = 0; i < k; ++i) {
      ObjectMask m;
      m.id = static_cast<int>(r.u32());
      Effect e;
      e.dx = r.f32();
      e.dy = r.f32();
      e.dz = r.f32();
      m.pixels.assign(static_cast<std::size_t>(g.image_h * g.image_w), 0);
      const std::uint32_t runs = r.u32();
      for (std::uint32_t run = 0; run < runs; ++run) {
        const std::uint32_t start = r.u32();
        const std::uint32_t len = r.u32();
        if (start + len > m.pixels.size()) throw FormatError("mask run out of bounds", r.pos - 8);
        std::fill(m.pixels.begin() + start, m.pixels.begin() + start + len, std::uint8_t(1));
      }
      rec.masks.push_back(std::move(m));
      rec.effects.push_back(e);
    }
    if (r.pos != frame_end) throw FormatError("dataset record length mismatch", frame_at);
    d.records.push_back(std::move(rec));
  }
  if (r.pos != r.size) throw FormatError("trailing bytes after last record", r.pos);
  return d;
}

void write_manifest_text(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "format=ADSY\n";
  out << "version=" << kDatasetVersion << "\n";
  out << "grid_rows=" << m.geom.grid_rows << "\n";
  out << "grid_cols=" << m.geom.grid_cols << "\n";
  out << "pitch=" << m.geom.pitch << "\n";
  out << "image_h=" << m.geom.image_h << "\n";
  out << "image_w=" << m.geom.image_w << "\n";
  out << "level_thickness=" << m.geom.level_thickness << "\n";
  out << "max_objects=" << m.geom.max_objects << "\n";
  out << "master_seed=" << m.master_seed << "\n";
  out << "episode_len=" << m.episode_len << "\n";
  out << "total_records=" << m.total_records << "\n";
  out << "num_records=" << m.num_records << "\n";
}

std::map<std::pair<std::int32_t, std::int32_t>, StepTruth> replay_truth(const DatasetManifest& m) {
  std::map<std::pair<std::int32_t, std::int32_t>, StepTruth> truth;
  const std::int64_t episodes = (m.total_records + m.episode_len - 1) / m.episode_len;
  std::vector<std::vector<std::pair<std::int32_t, StepTruth>>> per_ep(
      static_cast<std::size_t>(episodes));
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t e = 0; e < episodes; ++e) {
    const std::int64_t remaining = m.total_records - e * m.episode_len;
    const int steps = static_cast<int>(std::min<std::int64_t>(m.episode_len, remaining));
    const std::uint64_t seed = derive_seed(m.master_seed, static_cast<std::uint64_t>(e));
    Rng rng(seed);
    const int k = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(m.geom.max_objects)));
    WorldState w = init_world(m.geom, derive_seed(seed, 0), k);
    for (int s = 0; s < steps; ++s) {
      StepTruth st;
      st.world = w;
      for (const auto& o : w.objects) {
        ObjectTruth ot;
        ot.id = o.id;
        ot.kind = o.kind;
        ot.row = o.row;
        ot.col = o.col;
        ot.level = o.level;
        const auto g = graspable_at(w, cell_to_loc(m.geom, o.row, o.col));
        ot.graspable = g && *g == o.id;
        st.objects.push_back(ot);
      }
      per_ep[static_cast<std::size_t>(e)].emplace_back(s, std::move(st));
      const ActionId a = sample_valid_action(w, rng);
      w = apply_action(w, a).first;
    }
  }
  for (std::int64_t e = 0; e < episodes; ++e)
    for (auto& [s, st] : per_ep[static_cast<std::size_t>(e)])
      truth.emplace(std::make_pair(static_cast<std::int32_t>(e), s), std::move(st));
  return truth;
}

}  // namespace adsy
