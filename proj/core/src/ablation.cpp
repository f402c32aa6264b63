#include "seqrec/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <mutex>
#include <ostream>

namespace seqrec::ablation {

double median(std::vector<double> values) {
  if (values.empty()) return std::nan("");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

GridResult ablation_grid(const std::vector<std::vector<temporal::EmbeddingKind>>& combos,
                         const data::SplitDataset& split, const GridOptions& options,
                         const std::function<void(const RunResult&)>& on_run) {
  if (options.seeds.empty()) throw Error("ablation needs at least one seed");
  const std::size_t per_combo = options.seeds.size();
  GridResult grid;
  grid.runs.resize(combos.size() * per_combo);
  std::mutex report_mutex;

  eval::parallel_for(grid.runs.size(), options.jobs, [&](std::size_t i) {
    const auto& kinds = combos[i / per_combo];
    RunResult& run = grid.runs[i];
    run.combo = temporal::combo_name(kinds);
    run.seed = options.seeds[i % per_combo];
    try {
      model::ModelConfig cfg = options.base;
      cfg.heads = model::heads_from_kinds(kinds);
      train::TrainConfig tc = options.train;
      tc.seed = run.seed;
      tc.threads = 1;
      train::TrainResult trained = train::train(cfg, split, tc);
      eval::EvalOptions eo;
      eo.which = data::SplitKind::test;
      eo.negatives = options.eval_negatives;
      eo.ks = {5, 10};
      eo.seed = run.seed;
      run.test = eval::evaluate(trained.model, split, eo);
      run.ok = true;
    } catch (const std::exception& e) {
      run.ok = false;
      run.error = e.what();
    }
    if (on_run) {
      std::lock_guard lock(report_mutex);
      on_run(run);
    }
  });

  for (std::size_t c = 0; c < combos.size(); ++c) {
    GridRow row;
    row.combo = temporal::combo_name(combos[c]);
    std::vector<double> r5, r10, n5, n10;
    for (std::size_t s = 0; s < per_combo; ++s) {
      const RunResult& run = grid.runs[c * per_combo + s];
      ++row.runs;
      if (!run.ok) {
        ++row.failures;
        continue;
      }
      r5.push_back(run.test.recall_at(5));
      r10.push_back(run.test.recall_at(10));
      n5.push_back(run.test.ndcg_at(5));
      n10.push_back(run.test.ndcg_at(10));
    }
    row.recall5 = median(r5);
    row.recall10 = median(r10);
    row.ndcg5 = median(n5);
    row.ndcg10 = median(n10);
    grid.rows.push_back(row);
  }
  return grid;
}

void write_grid_csv(std::ostream& out, const GridResult& grid, const std::string& fingerprint) {
  out << "# fingerprint=" << fingerprint << '\n';
  out << "combo,recall@5,recall@10,ndcg@5,ndcg@10,runs,failures\n";
  char buf[256];
  for (const GridRow& r : grid.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%zu,%zu\n", r.combo.c_str(), r.recall5,
                  r.recall10, r.ndcg5, r.ndcg10, r.runs, r.failures);
    out << buf;
  }
}

std::vector<std::vector<temporal::EmbeddingKind>> read_combos(std::istream& in) {
  std::vector<std::vector<temporal::EmbeddingKind>> combos;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    combos.push_back(temporal::parse_combo(std::string_view(line).substr(first, last - first + 1)));
  }
  return combos;
}

}  // namespace seqrec::ablation
