#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "seqrec/data.hpp"
#include "seqrec/model.hpp"

namespace seqrec::eval {

/// 1-based rank of `scores[gt_index]`. Candidates scoring strictly higher
/// and candidates tied with the ground truth all rank above it.
std::size_t pessimistic_rank(std::span<const double> scores, std::size_t gt_index);

struct RankScore {
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::vector<double> ndcg;
};

/// Recall@K and NDCG@K for a single relevant item.
RankScore rank_and_score(std::span<const double> scores, std::size_t gt_index,
                         std::span<const std::size_t> ks);

struct MetricsReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // mean over evaluated users, per K
  std::vector<double> ndcg;
  std::size_t users = 0;
  std::size_t skipped = 0;     // users lacking enough eligible negatives
  std::uint64_t seed = 0;
  std::string fingerprint;

  double recall_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
};

/// Scores candidate items at one position of a window.
using CandidateScorer = std::function<std::vector<double>(
    const data::Window& window, std::size_t position, std::span<const data::ItemIndex> candidates)>;

CandidateScorer model_scorer(const model::TemporalRecommender& model);

struct EvalOptions {
  data::SplitKind which = data::SplitKind::test;
  std::size_t window = 50;
  std::size_t negatives = 100;
  std::vector<std::size_t> ks{5, 10};
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Called once per user with the exact model input, before scoring.
  std::function<void(const data::UserSplit&, const data::Window&)> on_instance;
};

/// One user's evaluation input: the window and [ground truth, negatives...].
struct EvalInstance {
  data::Window window;
  std::vector<data::ItemIndex> candidates;
};

/// Builds the instance for a user; negatives come from a per-user stream of
/// the negatives seed, so they do not depend on thread count.
EvalInstance make_eval_instance(const data::SplitDataset& split, const data::UserSplit& user,
                                const EvalOptions& options);

MetricsReport evaluate(const CandidateScorer& scorer, const data::SplitDataset& split,
                       const EvalOptions& options);
MetricsReport evaluate(const model::TemporalRecommender& model, const data::SplitDataset& split,
                       const EvalOptions& options);

/// CSV: "dataset,combo,seed_policy,metric,k,value,users", preceded by a
/// "# fingerprint=<hex>" line.
void write_metrics_csv(std::ostream& out, const MetricsReport& report, const std::string& dataset,
                       const std::string& combo, const std::string& seed_policy);

/// Runs `body(i)` for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

/// Worker cap from SEQREC_THREADS, or `fallback` when unset/invalid.
std::size_t threads_from_env(std::size_t fallback);

}  // namespace seqrec::eval
