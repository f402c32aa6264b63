#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

#include "seqrec/autograd.hpp"
#include "seqrec/data.hpp"
#include "seqrec/metrics.hpp"
#include "seqrec/model.hpp"

namespace seqrec::train {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
  std::size_t batch_size = 64;
  std::size_t patience = 20;
  std::size_t max_epochs = 200;
  std::uint64_t seed = 0;
  std::size_t samples_per_user = 1;
  /// Adds one row per user whose last train item is masked at its own
  /// timestamp, matching the shape of evaluation inputs.
  bool inference_window = true;
  /// Validate after each epoch (NDCG@10) and keep the best checkpoint.
  bool validate = true;
  std::size_t eval_negatives = 100;
  std::size_t threads = 1;
};

/// Adam with bias correction; weight decay is added to the gradient.
class AdamOptimizer {
 public:
  AdamOptimizer(ParameterSet& params, const TrainConfig& config);
  void step();
  std::size_t steps() const noexcept { return steps_; }

 private:
  ParameterSet& params_;
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t steps_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Early-stopping bookkeeping on validation NDCG@10.
struct TrainState {
  std::size_t epoch = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t epochs_since_improvement = 0;
  std::uint64_t seed = 0;

  /// Records one epoch's metric; returns true when it is a new best.
  bool observe(double metric);
  bool exhausted(std::size_t patience) const { return epochs_since_improvement >= patience; }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_ndcg10 = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  model::TemporalRecommender model;  // parameters of the best validation epoch
  std::vector<EpochLog> log;
  TrainState state;
};

/// Fills the catalog-derived fields (item count, day table, t_min).
void configure_for_catalog(model::ModelConfig& config, const data::Catalog& catalog,
                           std::size_t day_slack = 30);

/// Masked rows for one epoch, in the order they are batched.
std::vector<data::MaskedRow> epoch_rows(const data::SplitDataset& split,
                                        const model::ModelConfig& model_config,
                                        const TrainConfig& config, std::size_t epoch);

/// Trains until patience runs out or max_epochs; throws on divergence.
TrainResult train(const model::ModelConfig& model_config, const data::SplitDataset& split,
                  const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// "epoch,train_loss,val_ndcg10,seconds" lines, with a header.
void write_training_log(std::ostream& out, const std::vector<EpochLog>& log);

}  // namespace seqrec::train
