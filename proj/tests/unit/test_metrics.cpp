#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <sstream>

#include "seqrec/metrics.hpp"
#include "test_util.hpp"

using namespace seqrec;
using namespace seqrec::eval;

namespace {

/// Rank by sorting: order candidates by descending score, with the ground
/// truth placed after every candidate it ties with.
std::size_t sorted_rank(const std::vector<double>& scores, std::size_t gt) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if ((a == gt) != (b == gt)) return b == gt;
    return a < b;
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), gt) - order.begin()) + 1;
}

data::SplitDataset toy_split() {
  return data::leave_one_out_split(data::build_sequences(seqrec::testing::random_log(50, 40, 12, 8)));
}

}  // namespace

TEST(Rank, Examples) {
  const double a[] = {0.9, 0.95, 0.1};
  EXPECT_EQ(pessimistic_rank(a, 0), 2u);
  const double ties[] = {0.5, 0.5, 0.5};
  EXPECT_EQ(pessimistic_rank(ties, 0), 3u);
  EXPECT_EQ(pessimistic_rank(ties, 2), 3u);
  const double top[] = {3.0, 1.0, 2.0};
  EXPECT_EQ(pessimistic_rank(top, 0), 1u);
  EXPECT_THROW(pessimistic_rank(top, 3), Error);

  const std::size_t ks[] = {1, 5, 10};
  const RankScore s = rank_and_score(a, 0, ks);
  EXPECT_EQ(s.recall, (std::vector<double>{0.0, 1.0, 1.0}));
  EXPECT_EQ(s.ndcg[0], 0.0);
  EXPECT_NEAR(s.ndcg[1], 0.630930, 5e-7);
  EXPECT_EQ(s.ndcg[1], 1.0 / std::log2(3.0));
  const double third[] = {0.2, 0.9, 0.5, 0.1};
  const std::size_t ten[] = {10};
  EXPECT_EQ(rank_and_score(third, 0, ten).ndcg[0], 0.5);
  std::vector<double> twelfth(20, 0.0);
  for (std::size_t i = 1; i <= 11; ++i) twelfth[i] = 1.0;
  twelfth[0] = 0.5;
  EXPECT_EQ(pessimistic_rank(twelfth, 0), 12u);
  EXPECT_EQ(rank_and_score(twelfth, 0, ten).recall[0], 0.0);
  EXPECT_EQ(rank_and_score(twelfth, 0, ten).ndcg[0], 0.0);
  const RankScore t = rank_and_score(top, 0, ks);
  EXPECT_EQ(t.ndcg, (std::vector<double>{1.0, 1.0, 1.0}));
}

TEST(Rank, MatchesSortingOracle) {
  Rng rng(11);
  std::uniform_int_distribution<int> len(1, 120);
  std::uniform_int_distribution<int> coarse(0, 6);
  std::uniform_real_distribution<double> fine(-1.0, 1.0);
  const std::size_t ks[] = {1, 5, 10, 20};
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> scores(static_cast<std::size_t>(len(rng)));
    const bool tied = trial % 2 == 0;
    for (double& s : scores) s = tied ? coarse(rng) : fine(rng);
    const std::size_t gt = std::uniform_int_distribution<std::size_t>(0, scores.size() - 1)(rng);
    const std::size_t rank = sorted_rank(scores, gt);
    ASSERT_EQ(pessimistic_rank(scores, gt), rank);
    const RankScore r = rank_and_score(scores, gt, ks);
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(r.recall[i], rank <= ks[i] ? 1.0 : 0.0);
      EXPECT_EQ(r.ndcg[i], rank <= ks[i] ? 1.0 / std::log2(rank + 1.0) : 0.0);
      if (i > 0) {
        EXPECT_GE(r.recall[i], r.recall[i - 1]);
        EXPECT_GE(r.ndcg[i], r.ndcg[i - 1]);
      }
    }
  }
}

TEST(Evaluate, ToyScorerMatchesHandComputation) {
  const data::SplitDataset split = toy_split();
  // Scores are the item index, so the rank is known from the candidates.
  const CandidateScorer by_index = [](const data::Window&, std::size_t,
                                      std::span<const data::ItemIndex> c) {
    return std::vector<double>(c.begin(), c.end());
  };
  EvalOptions opts;
  opts.negatives = 10;
  opts.ks = {1, 5, 10};
  opts.seed = 3;
  const MetricsReport report = evaluate(by_index, split, opts);
  std::vector<double> recall(3, 0.0), ndcg(3, 0.0);
  std::size_t users = 0;
  for (const auto& u : split.users) {
    const EvalInstance inst = make_eval_instance(split, u, opts);
    std::size_t rank = 1;
    for (std::size_t i = 1; i < inst.candidates.size(); ++i) rank += inst.candidates[i] > inst.candidates[0];
    for (std::size_t k = 0; k < 3; ++k) {
      if (rank <= opts.ks[k]) {
        recall[k] += 1.0;
        ndcg[k] += 1.0 / std::log2(rank + 1.0);
      }
    }
    ++users;
  }
  EXPECT_EQ(report.users, users);
  EXPECT_EQ(report.skipped, 0u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(report.recall[k], recall[k] / users, 1e-15);
    EXPECT_NEAR(report.ndcg[k], ndcg[k] / users, 1e-15);
  }
  EXPECT_LE(report.recall_at(1), report.recall_at(5));
  EXPECT_LE(report.recall_at(5), report.recall_at(10));
  EXPECT_THROW(report.ndcg_at(7), Error);
}

TEST(Evaluate, InstancesDoNotLeakTheTarget) {
  const data::SplitDataset split = toy_split();
  for (auto which : {data::SplitKind::validation, data::SplitKind::test}) {
    EvalOptions opts;
    opts.which = which;
    opts.window = 6;
    opts.negatives = 10;
    std::size_t seen = 0;
    opts.on_instance = [&](const data::UserSplit& u, const data::Window& w) {
      ++seen;
      const data::UserSequence h = split.history(u, which);
      ASSERT_EQ(w.size(), 6u);
      EXPECT_EQ(w.items.back(), split.catalog.mask_token());
      EXPECT_EQ(w.timestamps.back(), data::SplitDataset::target_time(u, which));
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        if (w.is_pad(i)) continue;
        const std::size_t from_end = w.size() - 1 - i;
        ASSERT_LE(from_end, h.size());
        EXPECT_EQ(w.items[i], h.items[h.size() - from_end]);
        EXPECT_LT(w.timestamps[i], data::SplitDataset::target_time(u, which) + 1);
      }
      if (which == data::SplitKind::validation) {
        EXPECT_EQ(h.items, u.train.items);
      }
    };
    const CandidateScorer zero = [](const data::Window&, std::size_t,
                                    std::span<const data::ItemIndex> c) {
      return std::vector<double>(c.size(), 0.0);
    };
    const MetricsReport r = evaluate(zero, split, opts);
    EXPECT_EQ(seen, split.users.size());
    // Every candidate ties, so the pessimistic rank is last.
    EXPECT_EQ(r.recall_at(10), 0.0);
  }
}

TEST(Evaluate, NegativesExcludeHistoryAndAreSeeded) {
  const data::SplitDataset split = toy_split();
  EvalOptions opts;
  opts.negatives = 10;
  opts.seed = 5;
  for (const auto& u : split.users) {
    const EvalInstance a = make_eval_instance(split, u, opts);
    const EvalInstance b = make_eval_instance(split, u, opts);
    EXPECT_EQ(a.candidates, b.candidates);
    ASSERT_EQ(a.candidates.size(), 11u);
    EXPECT_EQ(a.candidates[0], u.test_item);
    const auto mine = data::SplitDataset::all_items(u);
    for (std::size_t i = 1; i < a.candidates.size(); ++i) {
      EXPECT_FALSE(std::binary_search(mine.begin(), mine.end(), a.candidates[i]));
    }
  }
}

TEST(Evaluate, ThreadCountDoesNotChangeResults) {
  const data::SplitDataset split = toy_split();
  model::ModelConfig cfg;
  cfg.hidden = 8;
  cfg.max_len = 8;
  cfg.layers = 1;
  cfg.heads = model::heads_from_kinds(temporal::parse_combo("pos+sin"));
  cfg.num_items = split.catalog.num_items();
  cfg.num_days = 64;
  cfg.t_min = split.catalog.t_min;
  const model::TemporalRecommender m(cfg, 1);
  EvalOptions opts;
  opts.negatives = 15;
  const MetricsReport one = evaluate(m, split, opts);
  opts.threads = 3;
  const MetricsReport three = evaluate(m, split, opts);
  EXPECT_EQ(one.recall, three.recall);
  EXPECT_EQ(one.ndcg, three.ndcg);
}

TEST(Evaluate, UsersWithoutEnoughNegativesAreSkipped) {
  const data::SplitDataset split = toy_split();
  EvalOptions opts;
  opts.negatives = split.catalog.num_items();
  const CandidateScorer zero = [](const data::Window&, std::size_t,
                                  std::span<const data::ItemIndex> c) {
    return std::vector<double>(c.size(), 0.0);
  };
  const MetricsReport r = evaluate(zero, split, opts);
  EXPECT_EQ(r.users, 0u);
  EXPECT_EQ(r.skipped, split.users.size());
}

TEST(MetricsCsv, Format) {
  MetricsReport r;
  r.ks = {5, 10};
  r.recall = {0.5, 0.75};
  r.ndcg = {0.25, 1.0 / 3.0};
  r.users = 4;
  r.fingerprint = "00ff";
  std::ostringstream out;
  write_metrics_csv(out, r, "toy", "pos+sin", "seed=0");
  EXPECT_EQ(out.str(),
            "# fingerprint=00ff\n"
            "dataset,combo,seed_policy,metric,k,value,users\n"
            "toy,pos+sin,seed=0,recall,5,0.500000,4\n"
            "toy,pos+sin,seed=0,recall,10,0.750000,4\n"
            "toy,pos+sin,seed=0,ndcg,5,0.250000,4\n"
            "toy,pos+sin,seed=0,ndcg,10,0.333333,4\n");
}

TEST(ParallelFor, VisitsEveryIndexOnceAndRethrows) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw Error("boom");
               }),
               Error);
}

TEST(ParallelFor, ThreadsFromEnvironment) {
  ::setenv("SEQREC_THREADS", "3", 1);
  EXPECT_EQ(threads_from_env(1), 3u);
  ::setenv("SEQREC_THREADS", "zero", 1);
  EXPECT_EQ(threads_from_env(2), 2u);
  ::unsetenv("SEQREC_THREADS");
  EXPECT_EQ(threads_from_env(5), 5u);
}
