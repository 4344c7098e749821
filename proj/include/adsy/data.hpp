#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "adsy/sim.hpp"

namespace adsy {

// One (depth image, segmentation, action, per-object effects) tuple. Image
// and masks are captured before the action; effects measured across it.
struct InteractionRecord {
  std::int32_t episode_id = 0;
  std::int32_t step = 0;
  Tensor<float> image;
  std::vector<ObjectMask> masks;  // sorted by object id
  ActionId action;
  std::vector<Effect> effects;    // aligned with masks
};

struct DatasetManifest {
  GeometryConfig geom;
  std::uint64_t master_seed = 0;
  std::int32_t episode_len = 5;
  // Parameters of the exploration run this data came from (split files keep
  // them so the originating run stays replayable).
  std::int64_t total_records = 0;
  std::int64_t num_records = 0;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<InteractionRecord> records;
};

inline constexpr std::uint16_t kDatasetVersion = 1;

// Runs episodes of uniformly random valid actions: each episode draws
// k ~ uniform{1..max_objects} objects and its own seed derived from
// (master_seed, episode index). Episodes are generated in parallel; record
// order is by episode then step regardless of scheduling.
Dataset explore(const GeometryConfig& geom, std::uint64_t master_seed, std::int64_t num_records,
                int episode_len);

// Per-episode split (no episode straddles two parts): ratios must sum to 1.
std::array<Dataset, 3> split(const Dataset& d, double train, double val, double test,
                             std::uint64_t seed);

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

void write_manifest_text(const DatasetManifest& m, const std::filesystem::path& path);

// Ground truth recovered by replaying the exploration run of a manifest.
struct ObjectTruth {
  int id = 0;
  ObjectKind kind = ObjectKind::Cube;
  int row = 0, col = 0, level = 0;
  bool graspable = false;
};

struct StepTruth {
  WorldState world;                  // pre-action state
  std::vector<ObjectTruth> objects;  // sorted by id
};

// Keyed by (episode_id, step); covers every record of the originating run.
std::map<std::pair<std::int32_t, std::int32_t>, StepTruth> replay_truth(const DatasetManifest& m);

}  // namespace adsy
