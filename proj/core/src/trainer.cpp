#include "seqrec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace seqrec::train {

AdamOptimizer::AdamOptimizer(ParameterSet& params, const TrainConfig& config)
    : params_(params),
      lr_(config.lr),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps),
      weight_decay_(config.weight_decay) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_.emplace_back(params_[i].value.shape());
    v_.emplace_back(params_[i].value.shape());
  }
}

void AdamOptimizer::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = params_[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k] + weight_decay_ * p.value[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      p.value[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
    // Frozen rows (PAD) stay exactly as initialized.
    if (!p.frozen_rows.empty()) {
      const std::size_t stride = p.value.size() / p.value.dim(0);
      for (std::size_t r : p.frozen_rows) {
        for (std::size_t c = 0; c < stride; ++c) p.value[r * stride + c] = 0.0;
      }
    }
  }
}

bool TrainState::observe(double metric) {
  ++epoch;
  if (metric > best_metric) {
    best_metric = metric;
    best_epoch = epoch;
    epochs_since_improvement = 0;
    return true;
  }
  ++epochs_since_improvement;
  return false;
}

void configure_for_catalog(model::ModelConfig& config, const data::Catalog& catalog,
                           std::size_t day_slack) {
  config.num_items = catalog.num_items();
  config.t_min = catalog.t_min;
  config.num_days = temporal::day_table_size(catalog.t_min, catalog.t_max, day_slack);
}

std::vector<data::MaskedRow> epoch_rows(const data::SplitDataset& split,
                                        const model::ModelConfig& model_config,
                                        const TrainConfig& config, std::size_t epoch) {
  std::vector<std::size_t> order(split.users.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(config.seed, Stream::shuffle, 0, epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  const data::ItemIndex mask_token = split.catalog.mask_token();
  std::vector<data::MaskedRow> rows;
  for (std::size_t i : order) {
    const data::UserSplit& u = split.users[i];
    Rng window_rng(derive_seed(config.seed, Stream::windows, u.user, epoch));
    Rng mask_rng(derive_seed(config.seed, Stream::masking, u.user, epoch));
    for (std::size_t s = 0; s < config.samples_per_user; ++s) {
      const data::Window w = data::sample_training_window(u.train, model_config.max_len, window_rng);
      rows.push_back(data::apply_cloze_mask(w, model_config.mask_prob, mask_token, mask_rng));
    }
    if (config.inference_window) {
      if (auto row = data::inference_style_row(u.train, model_config.max_len, mask_token)) {
        rows.push_back(std::move(*row));
      }
    }
  }
  return rows;
}

TrainResult train(const model::ModelConfig& model_config, const data::SplitDataset& split,
                  const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  if (config.batch_size == 0) throw Error("batch_size must be positive");
  if (config.max_epochs == 0) throw Error("max_epochs must be positive");
  TrainResult result{model::TemporalRecommender(model_config, config.seed), {}, {}};
  result.state.seed = config.seed;
  model::TemporalRecommender& net = result.model;
  AdamOptimizer optimizer(net.parameters(), config);
  std::vector<Tensor> best = net.parameters().snapshot();

  eval::EvalOptions val;
  val.which = data::SplitKind::validation;
  val.negatives = config.eval_negatives;
  val.ks = {10};
  val.seed = config.seed;
  val.threads = config.threads;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng dropout_rng(derive_seed(config.seed, Stream::dropout, 0, epoch));
    model::Context ctx{true, net.config().dropout, &dropout_rng, nullptr};

    const std::vector<data::MaskedRow> rows = epoch_rows(split, net.config(), config, epoch);
    double loss_sum = 0.0;
    std::size_t masked_total = 0;
    for (std::size_t begin = 0; begin < rows.size(); begin += config.batch_size) {
      data::MaskedBatch batch;
      const std::size_t end = std::min(rows.size(), begin + config.batch_size);
      for (std::size_t r = begin; r < end; ++r) batch.append(rows[r]);
      net.parameters().zero_grad();
      Tape tape;
      double loss = 0.0;
      try {
        Var l = net.batch_loss(tape, batch, ctx);
        loss = l.value().item();
        tape.backward(l);
      } catch (const Error& e) {
        throw Error("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss)) {
        throw Error("training diverged at epoch " + std::to_string(epoch) + ": loss is NaN");
      }
      optimizer.step();
      const std::size_t masked = batch.masked_count();
      loss_sum += loss * static_cast<double>(masked);
      masked_total += masked;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = masked_total ? loss_sum / static_cast<double>(masked_total) : 0.0;
    if (config.validate) {
      entry.val_ndcg10 = eval::evaluate(net, split, val).ndcg_at(10);
      if (result.state.observe(entry.val_ndcg10)) best = net.parameters().snapshot();
    } else {
      result.state.epoch = epoch;
      result.state.best_epoch = epoch;
    }
    entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (config.validate && result.state.exhausted(config.patience)) break;
  }

  if (config.validate) net.parameters().restore(best);
  return result;
}

void write_training_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,train_loss,val_ndcg10,seconds\n";
  char buf[128];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.10f,%.6f,%.3f\n", e.epoch, e.train_loss, e.val_ndcg10,
                  e.seconds);
    out << buf;
  }
}

}  // namespace seqrec::train
