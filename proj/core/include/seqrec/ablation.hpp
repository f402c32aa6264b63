#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "seqrec/metrics.hpp"
#include "seqrec/model.hpp"
#include "seqrec/trainer.hpp"

namespace seqrec::ablation {

/// One trained and evaluated model of the grid.
struct RunResult {
  std::string combo;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  eval::MetricsReport test;
};

/// Medians over the seeds of one embedding combination.
struct GridRow {
  std::string combo;
  double recall5 = 0.0;
  double recall10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::vector<RunResult> runs;
};

struct GridOptions {
  model::ModelConfig base;  // heads are replaced per combination
  train::TrainConfig train;  // seed is replaced per run
  std::vector<std::uint64_t> seeds{0};
  std::size_t jobs = 1;
  std::size_t eval_negatives = 100;
};

double median(std::vector<double> values);

/// Trains and tests one model per (combination, seed). A failing run is
/// recorded in its row; the grid carries on.
GridResult ablation_grid(const std::vector<std::vector<temporal::EmbeddingKind>>& combos,
                         const data::SplitDataset& split, const GridOptions& options,
                         const std::function<void(const RunResult&)>& on_run = {});

/// CSV: "combo,recall@5,recall@10,ndcg@5,ndcg@10,runs,failures", preceded
/// by a "# fingerprint=<hex>" line.
void write_grid_csv(std::ostream& out, const GridResult& grid, const std::string& fingerprint);

/// Reads one '+'-joined kind list per line; blank lines and '#' comments skipped.
std::vector<std::vector<temporal::EmbeddingKind>> read_combos(std::istream& in);

}  // namespace seqrec::ablation
