#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "seqrec/ablation.hpp"
#include "seqrec/trainer.hpp"
#include "test_util.hpp"

using namespace seqrec;
using temporal::EmbeddingKind;

namespace {

data::SplitDataset small_split() {
  return data::leave_one_out_split(
      data::build_sequences(seqrec::testing::random_log(30, 25, 12, 17)));
}

model::ModelConfig tiny_model(const data::SplitDataset& split) {
  model::ModelConfig c;
  c.hidden = 8;
  c.max_len = 8;
  c.layers = 1;
  c.heads = model::heads_from_kinds(temporal::parse_combo("pos+sin"));
  c.dropout = 0.1;
  train::configure_for_catalog(c, split.catalog);
  return c;
}

train::TrainConfig tiny_train() {
  train::TrainConfig t;
  t.lr = 5e-3;
  t.batch_size = 16;
  t.max_epochs = 6;
  t.patience = 3;
  t.eval_negatives = 10;
  return t;
}

std::string log_without_seconds(const std::vector<train::EpochLog>& log) {
  std::ostringstream out;
  for (const auto& e : log) out << e.epoch << ',' << e.train_loss << ',' << e.val_ndcg10 << '\n';
  return out.str();
}

}  // namespace

TEST(Adam, TwoStepsByHand) {
  ParameterSet ps;
  Parameter& p = ps.add("p", Tensor::vector({1.0, -2.0}));
  train::TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.1;
  train::AdamOptimizer adam(ps, cfg);

  const double grads[2][2] = {{0.5, 0.0}, {-0.5, 3.0}};
  double value[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 2; ++t) {
    for (int k = 0; k < 2; ++k) {
      p.grad[k] = grads[t - 1][k];
      const double g = grads[t - 1][k] + 0.1 * value[k];
      m[k] = 0.9 * m[k] + 0.1 * g;
      v[k] = 0.999 * v[k] + 0.001 * g * g;
      const double mhat = m[k] / (1.0 - std::pow(0.9, t));
      const double vhat = v[k] / (1.0 - std::pow(0.999, t));
      value[k] -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    }
    adam.step();
    EXPECT_NEAR(p.value[0], value[0], 1e-15);
    EXPECT_NEAR(p.value[1], value[1], 1e-15);
  }
  EXPECT_EQ(adam.steps(), 2u);
  // First step moves each coordinate by about lr, whatever the gradient scale.
  EXPECT_NEAR(value[0], 1.0 - 0.1 - 0.1 * 0.0, 0.2);
}

TEST(Adam, FrozenRowsStayZero) {
  ParameterSet ps;
  Parameter& p = ps.add("table", Tensor::matrix(2, 2, {0, 0, 1, 1}));
  p.frozen_rows = {0};
  train::AdamOptimizer adam(ps, train::TrainConfig{});
  p.grad.fill(1.0);
  adam.step();
  EXPECT_EQ(p.value.at(0, 0), 0.0);
  EXPECT_EQ(p.value.at(0, 1), 0.0);
  EXPECT_LT(p.value.at(1, 0), 1.0);
}

TEST(TrainState, PatienceCountsEpochsWithoutImprovement) {
  train::TrainState s;
  EXPECT_TRUE(s.observe(0.1));
  EXPECT_TRUE(s.observe(0.2));
  EXPECT_FALSE(s.observe(0.2));
  EXPECT_FALSE(s.observe(0.15));
  EXPECT_EQ(s.best_epoch, 2u);
  EXPECT_EQ(s.epochs_since_improvement, 2u);
  EXPECT_TRUE(s.exhausted(2));
  EXPECT_FALSE(s.exhausted(3));
  EXPECT_TRUE(s.observe(0.3));
  EXPECT_EQ(s.epochs_since_improvement, 0u);
  EXPECT_EQ(s.epoch, 5u);
}

TEST(TrainState, FlatMetricForTwentyEpochsStops) {
  train::TrainState s;
  s.observe(0.4);
  for (int i = 0; i < 19; ++i) {
    s.observe(0.4);
    EXPECT_FALSE(s.exhausted(20));
  }
  s.observe(0.4);
  EXPECT_TRUE(s.exhausted(20));
  EXPECT_EQ(s.best_epoch, 1u);
}

TEST(EpochRows, DeterministicAndCoverUsers) {
  const auto split = small_split();
  const auto mc = tiny_model(split);
  auto tc = tiny_train();
  tc.samples_per_user = 2;
  const auto a = train::epoch_rows(split, mc, tc, 1);
  const auto b = train::epoch_rows(split, mc, tc, 1);
  const auto c = train::epoch_rows(split, mc, tc, 2);
  ASSERT_EQ(a.size(), 3 * split.users.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].items, b[i].items);
    EXPECT_EQ(a[i].labels, b[i].labels);
    EXPECT_GE(a[i].masked_count(), 1u);
    EXPECT_EQ(a[i].items.size(), mc.max_len);
  }
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].items != c[i].items;
  EXPECT_TRUE(differs);
}

TEST(Train, EarlyStoppingKeepsBestValidationEpoch) {
  const auto split = small_split();
  const auto mc = tiny_model(split);
  auto tc = tiny_train();
  tc.max_epochs = 10;
  tc.patience = 2;
  std::size_t callbacks = 0;
  const auto result = train::train(mc, split, tc, [&](const train::EpochLog&) { ++callbacks; });
  ASSERT_FALSE(result.log.empty());
  EXPECT_EQ(callbacks, result.log.size());
  double best = -1.0;
  for (const auto& e : result.log) {
    best = std::max(best, e.val_ndcg10);
    EXPECT_TRUE(std::isfinite(e.train_loss));
  }
  EXPECT_EQ(result.state.best_metric, best);
  if (result.log.size() < tc.max_epochs) {
    EXPECT_EQ(result.log.size(), result.state.best_epoch + tc.patience);
  }

  eval::EvalOptions val;
  val.which = data::SplitKind::validation;
  val.negatives = tc.eval_negatives;
  val.ks = {10};
  val.seed = tc.seed;
  EXPECT_EQ(eval::evaluate(result.model, split, val).ndcg_at(10), best);
}

TEST(Train, LossDecreasesOnAverage) {
  const auto split = data::leave_one_out_split(
      data::build_sequences(seqrec::testing::cyclic_log(24, 10, 12)));
  auto mc = tiny_model(split);
  mc.hidden = 16;
  mc.dropout = 0.0;
  auto tc = tiny_train();
  tc.validate = false;
  tc.max_epochs = 80;
  tc.lr = 1e-2;
  const auto result = train::train(mc, split, tc);
  ASSERT_EQ(result.log.size(), 80u);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    first += result.log[i].train_loss / 5.0;
    last += result.log[75 + i].train_loss / 5.0;
  }
  EXPECT_NEAR(first, std::log(10.0), 0.05);
  EXPECT_LT(last, first - 0.5);
}

TEST(Train, SameSeedSameLog) {
  const auto split = small_split();
  const auto mc = tiny_model(split);
  const auto tc = tiny_train();
  const auto a = train::train(mc, split, tc);
  const auto b = train::train(mc, split, tc);
  EXPECT_EQ(log_without_seconds(a.log), log_without_seconds(b.log));
  auto other = tc;
  other.seed = 1;
  EXPECT_NE(log_without_seconds(train::train(mc, split, other).log), log_without_seconds(a.log));
}

TEST(Train, DivergenceIsReported) {
  const auto split = small_split();
  auto mc = tiny_model(split);
  mc.init_std = 1e200;
  auto tc = tiny_train();
  try {
    train::train(mc, split, tc);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("training diverged at epoch"), std::string::npos)
        << e.what();
  }
}

TEST(TrainLog, Format) {
  std::ostringstream out;
  train::write_training_log(out, {{1, 2.5, 0.125, 0.5}});
  EXPECT_EQ(out.str(), "epoch,train_loss,val_ndcg10,seconds\n1,2.5000000000,0.125000,0.500\n");
}

TEST(Ablation, Median) {
  EXPECT_EQ(ablation::median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(ablation::median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_TRUE(std::isnan(ablation::median({})));
}

TEST(Ablation, GridHasOneRowPerCombination) {
  const auto split = small_split();
  ablation::GridOptions opts;
  opts.base = tiny_model(split);
  opts.train = tiny_train();
  opts.train.max_epochs = 2;
  opts.seeds = {0, 1};
  opts.eval_negatives = 10;
  const std::vector<std::vector<EmbeddingKind>> combos{
      temporal::parse_combo("pos+pos"), temporal::parse_combo("sin+log"),
      temporal::parse_combo("con+exp")};
  std::size_t reported = 0;
  const auto grid = ablation::ablation_grid(combos, split, opts,
                                            [&](const ablation::RunResult&) { ++reported; });
  ASSERT_EQ(grid.rows.size(), 3u);
  EXPECT_EQ(grid.runs.size(), 6u);
  EXPECT_EQ(reported, 6u);
  EXPECT_EQ(grid.rows[1].combo, "sin+log");
  EXPECT_EQ(grid.rows[2].combo, "con+exp");
  for (const auto& row : grid.rows) {
    EXPECT_EQ(row.runs, 2u);
    EXPECT_EQ(row.failures, 0u);
    EXPECT_LE(row.recall5, row.recall10);
  }
  for (const auto& run : grid.runs) EXPECT_TRUE(run.ok) << run.error;
}

TEST(Ablation, FailingRunIsRecordedInItsRow) {
  const auto split = small_split();
  ablation::GridOptions opts;
  opts.base = tiny_model(split);
  opts.base.hidden = 6;  // width 3 per head: invalid for sin
  opts.train = tiny_train();
  opts.train.max_epochs = 1;
  opts.eval_negatives = 10;
  const std::vector<std::vector<EmbeddingKind>> combos{temporal::parse_combo("pos+sin"),
                                                       temporal::parse_combo("pos+day")};
  const auto grid = ablation::ablation_grid(combos, split, opts);
  ASSERT_EQ(grid.rows.size(), 2u);
  EXPECT_EQ(grid.rows[0].failures, 1u);
  EXPECT_TRUE(std::isnan(grid.rows[0].ndcg10));
  EXPECT_FALSE(grid.runs[0].error.empty());
  EXPECT_EQ(grid.rows[1].failures, 0u);

  std::ostringstream out;
  ablation::write_grid_csv(out, grid, "abc");
  std::istringstream lines(out.str());
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line, "# fingerprint=abc");
  std::getline(lines, line);
  EXPECT_EQ(line, "combo,recall@5,recall@10,ndcg@5,ndcg@10,runs,failures");
  std::getline(lines, line);
  EXPECT_EQ(line.substr(0, 8), "pos+sin,");
  EXPECT_EQ(line.substr(line.size() - 4), ",1,1");
}

TEST(Ablation, ReadCombos) {
  std::istringstream in("# header\n\npos+sin\n  day+log \nlog+day+pos+sin\n");
  const auto combos = ablation::read_combos(in);
  ASSERT_EQ(combos.size(), 3u);
  EXPECT_EQ(temporal::combo_name(combos[1]), "day+log");
  EXPECT_EQ(temporal::combo_name(combos[2]), "day+pos+sin+log");
  std::istringstream bad("pos+week\n");
  EXPECT_THROW(ablation::read_combos(bad), Error);
}
