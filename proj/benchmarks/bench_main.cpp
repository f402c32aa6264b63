#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "seqrec/data.hpp"
#include "seqrec/metrics.hpp"
#include "seqrec/model.hpp"
#include "seqrec/temporal.hpp"

using namespace seqrec;

namespace {

model::ModelConfig bench_config(std::size_t hidden, std::size_t length) {
  model::ModelConfig c;
  c.hidden = hidden;
  c.max_len = length;
  c.layers = 2;
  c.heads = model::heads_from_kinds(temporal::parse_combo("day+pos+sin+log"));
  c.dropout = 0.2;
  c.num_items = 3000;
  c.num_days = 1100;
  c.t_min = 956'703'932;
  return c;
}

data::Window bench_window(const model::ModelConfig& c, Rng& rng, bool masked_last = true) {
  std::uniform_int_distribution<data::ItemIndex> item(1, c.num_items);
  std::uniform_int_distribution<data::Timestamp> gap(0, 86400);
  data::Window w;
  data::Timestamp t = c.t_min;
  for (std::size_t i = 0; i < c.max_len; ++i) {
    t += gap(rng);
    w.items.push_back(item(rng));
    w.timestamps.push_back(t);
  }
  if (masked_last) w.items.back() = c.num_items + 1;
  return w;
}

void BM_Encoder(benchmark::State& state, Tensor (*encode)(const Tensor&, double, std::size_t)) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  Tensor diff({n, n});
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) diff[a * n + b] = static_cast<double>(a) - static_cast<double>(b);
  }
  for (auto _ : state) benchmark::DoNotOptimize(encode(diff, 10000.0, 16));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n));
}
BENCHMARK_CAPTURE(BM_Encoder, sin, temporal::sin_encode)->Arg(50)->Arg(200);
BENCHMARK_CAPTURE(BM_Encoder, exp, temporal::exp_encode)->Arg(50)->Arg(200);
BENCHMARK_CAPTURE(BM_Encoder, log, temporal::log_encode)->Arg(50)->Arg(200);

void BM_ForwardLogits(benchmark::State& state) {
  const auto c = bench_config(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  const model::TemporalRecommender m(c, 0);
  Rng rng(1);
  const data::Window w = bench_window(c, rng);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward_logits(w.items, w.timestamps));
}
BENCHMARK(BM_ForwardLogits)->Args({32, 50})->Args({64, 200})->Unit(benchmark::kMillisecond);

void BM_ScoreCandidates(benchmark::State& state) {
  const auto c = bench_config(32, 50);
  const model::TemporalRecommender m(c, 0);
  Rng rng(2);
  const data::Window w = bench_window(c, rng);
  std::vector<data::ItemIndex> candidates(101);
  for (std::size_t i = 0; i < candidates.size(); ++i) candidates[i] = static_cast<data::ItemIndex>(1 + 7 * i);
  for (auto _ : state) benchmark::DoNotOptimize(m.score_candidates(w, w.size() - 1, candidates));
}
BENCHMARK(BM_ScoreCandidates)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto c = bench_config(32, 50);
  model::TemporalRecommender m(c, 0);
  Rng rng(3);
  data::MaskedBatch batch;
  for (int b = 0; b < state.range(0); ++b) {
    batch.append(data::apply_cloze_mask(bench_window(c, rng, false), c.mask_prob, c.num_items + 1, rng));
  }
  for (auto _ : state) {
    Tape tape;
    model::Context ctx;
    ctx.training = true;
    ctx.dropout = c.dropout;
    ctx.rng = &rng;
    const Var loss = m.batch_loss(tape, batch, ctx);
    tape.backward(loss);
    m.parameters().zero_grad();
  }
}
BENCHMARK(BM_TrainStep)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_RankAndScore(benchmark::State& state) {
  Rng rng(4);
  std::normal_distribution<double> score;
  std::vector<double> scores(static_cast<std::size_t>(state.range(0)));
  for (double& s : scores) s = score(rng);
  const std::size_t ks[] = {1, 5, 10, 20};
  for (auto _ : state) benchmark::DoNotOptimize(eval::rank_and_score(scores, 0, ks));
}
BENCHMARK(BM_RankAndScore)->Arg(101)->Arg(3417);

void BM_SampleNegatives(benchmark::State& state) {
  data::Catalog catalog;
  catalog.item_ids.assign(3001, "");
  catalog.popularity.assign(3001, 0);
  for (std::size_t i = 1; i <= 3000; ++i) catalog.popularity[i] = 1 + 10000 / i;
  std::vector<data::ItemIndex> mine;
  for (data::ItemIndex v = 1; v <= 3000; v += 17) mine.push_back(v);
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(data::sample_negatives(mine, catalog, 100, rng));
}
BENCHMARK(BM_SampleNegatives);

}  // namespace

BENCHMARK_MAIN();
