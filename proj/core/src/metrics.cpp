#include "seqrec/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

namespace seqrec::eval {

std::size_t pessimistic_rank(std::span<const double> scores, std::size_t gt_index) {
  if (gt_index >= scores.size()) throw Error("ground-truth index out of range");
  const double gt = scores[gt_index];
  std::size_t above = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != gt_index && scores[i] >= gt) ++above;
  }
  return above + 1;
}

RankScore rank_and_score(std::span<const double> scores, std::size_t gt_index,
                         std::span<const std::size_t> ks) {
  const std::size_t rank = pessimistic_rank(scores, gt_index);
  RankScore out;
  out.ks.assign(ks.begin(), ks.end());
  for (std::size_t k : ks) {
    const bool hit = rank <= k;
    out.recall.push_back(hit ? 1.0 : 0.0);
    out.ndcg.push_back(hit ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0);
  }
  return out;
}

double MetricsReport::recall_at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return recall[i];
  }
  throw Error("report has no Recall@" + std::to_string(k));
}

double MetricsReport::ndcg_at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return ndcg[i];
  }
  throw Error("report has no NDCG@" + std::to_string(k));
}

CandidateScorer model_scorer(const model::TemporalRecommender& model) {
  return [&model](const data::Window& w, std::size_t pos, std::span<const data::ItemIndex> c) {
    return model.score_candidates(w, pos, c);
  };
}

EvalInstance make_eval_instance(const data::SplitDataset& split, const data::UserSplit& user,
                                const EvalOptions& options) {
  const data::UserSequence history = split.history(user, options.which);
  EvalInstance inst;
  inst.window = data::build_eval_instance(history.items, history.timestamps,
                                          data::SplitDataset::target_time(user, options.which),
                                          options.window, split.catalog.mask_token());
  const std::vector<data::ItemIndex> seen = data::SplitDataset::all_items(user);
  Rng rng(derive_seed(options.seed, Stream::negatives, user.user));
  inst.candidates.push_back(data::SplitDataset::target(user, options.which));
  const auto negatives = data::sample_negatives(seen, split.catalog, options.negatives, rng);
  inst.candidates.insert(inst.candidates.end(), negatives.begin(), negatives.end());
  return inst;
}

MetricsReport evaluate(const CandidateScorer& scorer, const data::SplitDataset& split,
                       const EvalOptions& options) {
  const std::size_t n = split.users.size();
  std::vector<RankScore> per_user(n);
  std::vector<unsigned char> skipped(n, 0);
  parallel_for(n, options.threads, [&](std::size_t i) {
    const data::UserSplit& user = split.users[i];
    EvalInstance inst;
    try {
      inst = make_eval_instance(split, user, options);
    } catch (const Error&) {
      skipped[i] = 1;
      return;
    }
    if (options.on_instance) options.on_instance(user, inst.window);
    const std::vector<double> scores =
        scorer(inst.window, inst.window.size() - 1, inst.candidates);
    per_user[i] = rank_and_score(scores, 0, options.ks);
  });

  MetricsReport report;
  report.ks = options.ks;
  report.recall.assign(options.ks.size(), 0.0);
  report.ndcg.assign(options.ks.size(), 0.0);
  report.seed = options.seed;
  for (std::size_t i = 0; i < n; ++i) {
    if (skipped[i]) {
      ++report.skipped;
      continue;
    }
    ++report.users;
    for (std::size_t k = 0; k < options.ks.size(); ++k) {
      report.recall[k] += per_user[i].recall[k];
      report.ndcg[k] += per_user[i].ndcg[k];
    }
  }
  if (report.users > 0) {
    for (std::size_t k = 0; k < options.ks.size(); ++k) {
      report.recall[k] /= static_cast<double>(report.users);
      report.ndcg[k] /= static_cast<double>(report.users);
    }
  }
  return report;
}

MetricsReport evaluate(const model::TemporalRecommender& model, const data::SplitDataset& split,
                       const EvalOptions& options) {
  EvalOptions opts = options;
  opts.window = model.config().max_len;
  return evaluate(model_scorer(model), split, opts);
}

void write_metrics_csv(std::ostream& out, const MetricsReport& report, const std::string& dataset,
                       const std::string& combo, const std::string& seed_policy) {
  out << "# fingerprint=" << report.fingerprint << '\n';
  out << "dataset,combo,seed_policy,metric,k,value,users\n";
  char buf[64];
  auto line = [&](const char* metric, std::size_t k, double v) {
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    out << dataset << ',' << combo << ',' << seed_policy << ',' << metric << ',' << k << ','
        << buf << ',' << report.users << '\n';
  };
  for (std::size_t i = 0; i < report.ks.size(); ++i) line("recall", report.ks[i], report.recall[i]);
  for (std::size_t i = 0; i < report.ks.size(); ++i) line("ndcg", report.ks[i], report.ndcg[i]);
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::size_t threads_from_env(std::size_t fallback) {
  if (const char* env = std::getenv("SEQREC_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return fallback;
}

}  // namespace seqrec::eval
