#pragma once

#include <filesystem>
#include <map>

#include "adsy/model.hpp"

namespace adsy {

struct CodeHistogram {
  std::map<SymbolCode, std::int64_t> counts;
  std::int64_t total = 0;
};

// Evaluation-mode code of every object segment in the dataset; exact counts.
CodeHistogram code_histogram(const PerceptionModel<float>& perception, const Dataset& d);

// Smallest K such that the K most frequent codes cover at least `fraction`
// of all segments. Ties sort by the code's integer value ascending.
int coverage_k(const CodeHistogram& h, double fraction);

// Frequency-sorted (code, count) pairs with the same deterministic tie-break.
std::vector<std::pair<SymbolCode, std::int64_t>> sorted_counts(const CodeHistogram& h);

struct Prototype {
  SymbolCode code;
  Tensor<float> mean_image;  // full-frame render averaged over activations,
                             // non-segment pixels held at the table constant
  double mean_row = 0;       // mean segment centroid, pixels
  double mean_col = 0;
  std::int64_t count = 0;
};

// One prototype per code activated at least min_count times, sorted by count
// descending.
std::vector<Prototype> prototypes(const PerceptionModel<float>& perception, const Dataset& d,
                                  std::int64_t min_count);

// Code vs simulator ground truth, recovered by replaying the dataset's
// manifest.
struct CrossTabRow {
  SymbolCode code;
  std::int64_t count = 0;
  std::int64_t cubes = 0;
  std::int64_t sticks = 0;
  std::int64_t graspable = 0;
  std::int64_t not_graspable = 0;
  std::vector<std::int64_t> by_location;
  std::vector<std::int64_t> by_level;
  double mean_row = 0;
  double mean_col = 0;
};

struct CrossTab {
  std::vector<CrossTabRow> rows;  // count descending, code value ascending
  double mi_code_graspable = 0;   // mutual information, nats
};

CrossTab cross_tabulate(const PerceptionModel<float>& perception, const Dataset& d);

// Writes histogram.tsv, coverage.tsv, prototypes.tsv, crosstab.tsv,
// report.txt, and a prototypes/ gallery of 16-bit grayscale images.
void write_symbol_report(const std::filesystem::path& out_dir, const CodeHistogram& h,
                         const std::vector<Prototype>& protos, const CrossTab& tab);

}  // namespace adsy
