#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seqrec/autograd.hpp"
#include "seqrec/data.hpp"
#include "seqrec/rng.hpp"
#include "seqrec/temporal.hpp"

namespace seqrec::model {

using temporal::EmbeddingKind;

/// Which temporal embedding an attention head consumes.
struct HeadSpec {
  EmbeddingKind kind = EmbeddingKind::pos;

  bool relative() const noexcept { return temporal::is_relative(kind); }
  bool operator==(const HeadSpec&) const = default;
};

/// All architecture hyperparameters. One head per entry of `heads`.
struct ModelConfig {
  std::size_t hidden = 64;
  std::size_t max_len = 50;
  std::size_t layers = 2;
  std::vector<HeadSpec> heads{{EmbeddingKind::day}, {EmbeddingKind::pos},
                              {EmbeddingKind::sin}, {EmbeddingKind::log}};
  double dropout = 0.2;
  double mask_prob = 0.2;
  double tau = temporal::kSecondsPerDay;
  double freq = 10000.0;
  std::size_t num_items = 0;
  std::size_t num_days = 1;
  data::Timestamp t_min = 0;
  bool output_bias = true;
  double init_std = 0.02;
  double ln_eps = 1e-12;

  std::size_t num_heads() const noexcept { return heads.size(); }
  std::size_t head_dim() const;
  bool uses(EmbeddingKind kind) const;
  void validate() const;

  std::vector<std::pair<std::string, std::string>> to_meta() const;
  static ModelConfig from_meta(const std::vector<std::pair<std::string, std::string>>& meta);
};

std::vector<HeadSpec> heads_from_kinds(std::span<const EmbeddingKind> kinds);

/// Parameters of one attention head. Absolute heads use q_pos/k_pos;
/// relative heads use k_rel and the two global biases.
struct HeadParams {
  EmbeddingKind kind = EmbeddingKind::pos;
  Parameter* q_item = nullptr;  // h x d
  Parameter* k_item = nullptr;  // h x d
  Parameter* v_item = nullptr;  // h x d
  Parameter* q_pos = nullptr;   // d x d
  Parameter* k_pos = nullptr;   // d x d
  Parameter* k_rel = nullptr;   // d x d
  Parameter* bias_item = nullptr;  // d
  Parameter* bias_rel = nullptr;   // d
};

struct LayerParams {
  std::vector<HeadParams> heads;
  Parameter* out_proj = nullptr;  // h x h
  Parameter* ffn_w1 = nullptr;    // h x 4h
  Parameter* ffn_b1 = nullptr;
  Parameter* ffn_w2 = nullptr;    // 4h x h
  Parameter* ffn_b2 = nullptr;
  Parameter* ln1_gain = nullptr;
  Parameter* ln1_offset = nullptr;
  Parameter* ln2_gain = nullptr;
  Parameter* ln2_offset = nullptr;
};

/// Per-forward settings. Dropout applies only when `training` is set.
struct Context {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
  /// When set, every head appends its attention probabilities (N x N).
  std::vector<Tensor>* attention_sink = nullptr;
};

/// Temporal embeddings for one input window, at head width.
struct TemporalEmbeddingSet {
  std::map<EmbeddingKind, Var> absolute;      // N x d, learnable
  std::map<EmbeddingKind, Tensor> relative;   // N x N x d, fixed
};

/// Key mask for attention: column b is kept iff position b is not [PAD].
Mask attention_mask(std::span<const data::ItemIndex> items);

Var relative_head(Tape& tape, Var x, const Tensor& rel_embedding, const HeadParams& p,
                  const Mask& mask, Context& ctx);
Var absolute_head(Tape& tape, Var x, Var abs_embedding, const HeadParams& p, const Mask& mask,
                  Context& ctx);

/// Runs each head on its own embedding, concatenates, projects with W^O.
Var multi_head_mixture(Tape& tape, Var x, const TemporalEmbeddingSet& embeddings,
                       const LayerParams& layer, const Mask& mask, Context& ctx);

/// GELU(x W1 + b1) W2 + b2.
Var ffn(Tape& tape, Var x, const LayerParams& layer);

/// Pre-LN residual block: attention sublayer then FFN sublayer.
Var encoder_layer(Tape& tape, Var x, const TemporalEmbeddingSet& embeddings,
                  const LayerParams& layer, const Mask& mask, Context& ctx, double ln_eps);

/// Mean negative log-probability of the labeled items. `probabilities` is
/// N x |V| with column j holding item j+1.
double cloze_loss(const Tensor& probabilities, std::span<const std::int64_t> labels);

/// The full network: item table, absolute tables, L encoder layers and the
/// tied prediction head.
class TemporalRecommender {
 public:
  TemporalRecommender(ModelConfig config, std::uint64_t seed);

  TemporalRecommender(const TemporalRecommender&) = delete;
  TemporalRecommender& operator=(const TemporalRecommender&) = delete;
  TemporalRecommender(TemporalRecommender&&) = default;
  TemporalRecommender& operator=(TemporalRecommender&&) = default;

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  const std::vector<LayerParams>& layers() const noexcept { return layers_; }
  const temporal::AbsoluteTables& absolute_tables() const noexcept { return tables_; }
  Parameter& item_table() const { return *item_table_; }

  TemporalEmbeddingSet embeddings(Tape& tape, std::span<const data::Timestamp> t) const;

  /// Encoder output, N x h.
  Var encode(Tape& tape, std::span<const data::ItemIndex> items,
             std::span<const data::Timestamp> timestamps, Context& ctx) const;

  /// Pre-softmax item scores for the selected encoder rows (rows x |V|).
  Var logits(Tape& tape, Var encoded, std::span<const std::size_t> rows) const;

  /// Scores for specific items at one position (same arithmetic as `logits`).
  Var candidate_scores(Tape& tape, Var encoded, std::size_t row,
                       std::span<const data::ItemIndex> items) const;

  /// Mean cross-entropy over all masked positions of the batch.
  Var batch_loss(Tape& tape, const data::MaskedBatch& batch, Context& ctx) const;

  /// Eval-mode pre-softmax scores for every position, N x |V|.
  Tensor forward_logits(std::span<const data::ItemIndex> items,
                        std::span<const data::Timestamp> timestamps) const;
  /// Eval-mode probabilities for every position, N x |V|.
  Tensor forward(std::span<const data::ItemIndex> items,
                 std::span<const data::Timestamp> timestamps) const;

  /// Eval-mode scores of `candidates` at `position`.
  std::vector<double> score_candidates(const data::Window& window, std::size_t position,
                                       std::span<const data::ItemIndex> candidates) const;

  void save(const std::filesystem::path& path,
            const std::vector<std::pair<std::string, std::string>>& extra_meta = {}) const;
  static TemporalRecommender load(const std::filesystem::path& path);

 private:
  void build(std::uint64_t seed);
  void check_inputs(std::span<const data::ItemIndex> items,
                    std::span<const data::Timestamp> timestamps) const;

  ModelConfig config_;
  ParameterSet params_;
  Parameter* item_table_ = nullptr;
  temporal::AbsoluteTables tables_;
  std::vector<LayerParams> layers_;
  Parameter* pred_w_ = nullptr;
  Parameter* pred_b_ = nullptr;
  Parameter* out_bias_ = nullptr;
};

}  // namespace seqrec::model
