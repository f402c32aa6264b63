#include "seqrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "seqrec/checkpoint.hpp"
#include "seqrec/ops.hpp"

namespace seqrec::model {
namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor truncated_normal(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : t.data()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = z * std;
  }
  return t;
}

}  // namespace

std::size_t ModelConfig::head_dim() const {
  if (heads.empty()) throw Error("model needs at least one attention head");
  return hidden / heads.size();
}

bool ModelConfig::uses(EmbeddingKind kind) const {
  return std::any_of(heads.begin(), heads.end(), [&](const HeadSpec& h) { return h.kind == kind; });
}

void ModelConfig::validate() const {
  if (heads.empty()) throw Error("model needs at least one attention head");
  if (hidden == 0 || hidden % heads.size() != 0) {
    throw Error("hidden size " + std::to_string(hidden) + " is not divisible by head count " +
                std::to_string(heads.size()));
  }
  if (max_len == 0) throw Error("max_len must be positive");
  if (layers == 0) throw Error("layers must be positive");
  if (num_items == 0) throw Error("num_items must be positive");
  if (num_days == 0) throw Error("num_days must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
  if (!(mask_prob > 0.0 && mask_prob <= 1.0)) throw Error("mask_prob must lie in (0, 1]");
  if (!(tau > 0.0)) throw Error("tau must be positive");
  if (!(freq > 0.0)) throw Error("freq must be positive");
  if (uses(EmbeddingKind::sin) && head_dim() % 2 != 0) {
    throw Error("sin heads need an even head width, got " + std::to_string(head_dim()));
  }
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_meta() const {
  std::string head_list;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (i) head_list += '+';
    head_list += temporal::to_string(heads[i].kind);
  }
  return {
      {"model.hidden", std::to_string(hidden)},
      {"model.max_len", std::to_string(max_len)},
      {"model.layers", std::to_string(layers)},
      {"model.heads", head_list},
      {"model.dropout", format_double(dropout)},
      {"model.mask_prob", format_double(mask_prob)},
      {"model.tau", format_double(tau)},
      {"model.freq", format_double(freq)},
      {"model.num_items", std::to_string(num_items)},
      {"model.num_days", std::to_string(num_days)},
      {"model.t_min", std::to_string(t_min)},
      {"model.output_bias", output_bias ? "1" : "0"},
      {"model.init_std", format_double(init_std)},
      {"model.ln_eps", format_double(ln_eps)},
  };
}

ModelConfig ModelConfig::from_meta(const std::vector<std::pair<std::string, std::string>>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    for (const auto& [k, v] : meta) {
      if (k == key) return v;
    }
    throw Error("checkpoint lacks model setting " + key);
  };
  ModelConfig c;
  c.hidden = std::stoull(get("model.hidden"));
  c.max_len = std::stoull(get("model.max_len"));
  c.layers = std::stoull(get("model.layers"));
  c.heads = heads_from_kinds(temporal::parse_combo(get("model.heads")));
  c.dropout = std::stod(get("model.dropout"));
  c.mask_prob = std::stod(get("model.mask_prob"));
  c.tau = std::stod(get("model.tau"));
  c.freq = std::stod(get("model.freq"));
  c.num_items = std::stoull(get("model.num_items"));
  c.num_days = std::stoull(get("model.num_days"));
  c.t_min = std::stoll(get("model.t_min"));
  c.output_bias = get("model.output_bias") == "1";
  c.init_std = std::stod(get("model.init_std"));
  c.ln_eps = std::stod(get("model.ln_eps"));
  c.validate();
  return c;
}

std::vector<HeadSpec> heads_from_kinds(std::span<const EmbeddingKind> kinds) {
  std::vector<HeadSpec> out;
  for (EmbeddingKind k : kinds) out.push_back(HeadSpec{k});
  return out;
}

Mask attention_mask(std::span<const data::ItemIndex> items) {
  const std::size_t n = items.size();
  Mask m{{n, n}, std::vector<unsigned char>(n * n, 0)};
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) m.keep[a * n + b] = items[b] != data::kPadToken;
  }
  return m;
}

namespace {

Var attend(Var logits, Var values, double inv_scale, const Mask& mask, Context& ctx) {
  Var probs = ops::softmax_masked(ops::scale(logits, inv_scale), mask);
  if (ctx.attention_sink != nullptr) ctx.attention_sink->push_back(probs.value());
  if (ctx.training && ctx.dropout > 0.0) probs = ops::dropout(probs, ctx.dropout, *ctx.rng);
  return ops::matmul(probs, values);
}

void require_rows(const Tensor& x, std::size_t rows, const char* what) {
  if (x.rank() != 2 || x.dim(0) != rows) {
    throw Error(std::string(what) + ": shape mismatch " + shape_string(x.shape()));
  }
}

}  // namespace

Var relative_head(Tape& tape, Var x, const Tensor& rel_embedding, const HeadParams& p,
                  const Mask& mask, Context& ctx) {
  const std::size_t n = x.value().rows();
  const std::size_t d = p.q_item->value.dim(1);
  require_rows(x.value(), n, "relative_head");
  if (rel_embedding.rank() != 3 || rel_embedding.dim(0) != n || rel_embedding.dim(1) != n ||
      rel_embedding.dim(2) != d) {
    throw Error("relative_head: embedding shape " + shape_string(rel_embedding.shape()) +
                " does not match " + shape_string({n, n, d}));
  }
  Var q = ops::matmul(x, tape.param(*p.q_item));
  Var k = ops::matmul(x, tape.param(*p.k_item));
  Var v = ops::matmul(x, tape.param(*p.v_item));
  Var content = ops::matmul_nt(ops::add_row(q, tape.param(*p.bias_item)), k);
  // <q_a + b_R, e_ab K_R> = <(q_a + b_R) K_R^T, e_ab>
  Var projected = ops::matmul_nt(ops::add_row(q, tape.param(*p.bias_rel)), tape.param(*p.k_rel));
  Var position = ops::pairwise_dot(projected, rel_embedding);
  return attend(ops::add(content, position), v, 1.0 / std::sqrt(static_cast<double>(d)),
                mask, ctx);
}

Var absolute_head(Tape& tape, Var x, Var abs_embedding, const HeadParams& p, const Mask& mask,
                  Context& ctx) {
  const std::size_t n = x.value().rows();
  const std::size_t d = p.q_item->value.dim(1);
  const Tensor& e = abs_embedding.value();
  if (e.rank() != 2 || e.dim(0) != n || e.dim(1) != d) {
    throw Error("absolute_head: embedding shape " + shape_string(e.shape()) + " does not match " +
                shape_string({n, d}));
  }
  Var q = ops::matmul(x, tape.param(*p.q_item));
  Var k = ops::matmul(x, tape.param(*p.k_item));
  Var v = ops::matmul(x, tape.param(*p.v_item));
  Var content = ops::matmul_nt(q, k);
  Var qa = ops::matmul(abs_embedding, tape.param(*p.q_pos));
  Var ka = ops::matmul(abs_embedding, tape.param(*p.k_pos));
  Var position = ops::matmul_nt(qa, ka);
  return attend(ops::add(content, position), v, 1.0 / std::sqrt(static_cast<double>(d)),
                mask, ctx);
}

Var multi_head_mixture(Tape& tape, Var x, const TemporalEmbeddingSet& embeddings,
                       const LayerParams& layer, const Mask& mask, Context& ctx) {
  std::vector<Var> outputs;
  outputs.reserve(layer.heads.size());
  for (const HeadParams& head : layer.heads) {
    if (temporal::is_relative(head.kind)) {
      auto it = embeddings.relative.find(head.kind);
      if (it == embeddings.relative.end()) {
        throw Error("missing embedding for head kind " + std::string(temporal::to_string(head.kind)));
      }
      outputs.push_back(relative_head(tape, x, it->second, head, mask, ctx));
    } else {
      auto it = embeddings.absolute.find(head.kind);
      if (it == embeddings.absolute.end()) {
        throw Error("missing embedding for head kind " + std::string(temporal::to_string(head.kind)));
      }
      outputs.push_back(absolute_head(tape, x, it->second, head, mask, ctx));
    }
  }
  return ops::matmul(ops::concat_cols(outputs), tape.param(*layer.out_proj));
}

Var ffn(Tape& tape, Var x, const LayerParams& layer) {
  Var inner = ops::gelu(ops::add_row(ops::matmul(x, tape.param(*layer.ffn_w1)),
                                     tape.param(*layer.ffn_b1)));
  return ops::add_row(ops::matmul(inner, tape.param(*layer.ffn_w2)), tape.param(*layer.ffn_b2));
}

Var encoder_layer(Tape& tape, Var x, const TemporalEmbeddingSet& embeddings,
                  const LayerParams& layer, const Mask& mask, Context& ctx, double ln_eps) {
  auto maybe_dropout = [&](Var v) {
    return ctx.training && ctx.dropout > 0.0 ? ops::dropout(v, ctx.dropout, *ctx.rng) : v;
  };
  Var normed = ops::layer_norm(x, tape.param(*layer.ln1_gain), tape.param(*layer.ln1_offset), ln_eps);
  Var y = ops::add(x, maybe_dropout(multi_head_mixture(tape, normed, embeddings, layer, mask, ctx)));
  Var normed2 = ops::layer_norm(y, tape.param(*layer.ln2_gain), tape.param(*layer.ln2_offset), ln_eps);
  return ops::add(y, maybe_dropout(ffn(tape, normed2, layer)));
}

double cloze_loss(const Tensor& probabilities, std::span<const std::int64_t> labels) {
  if (probabilities.rows() != labels.size()) throw Error("cloze_loss: one label per row required");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] == data::kIgnoreLabel) continue;
    const auto col = static_cast<std::size_t>(labels[r] - 1);
    if (labels[r] < 1 || col >= probabilities.cols()) throw Error("cloze_loss: label out of range");
    total -= std::log(probabilities.at(r, col));
    ++count;
  }
  if (count == 0) throw Error("cloze_loss: no masked positions");
  return total / static_cast<double>(count);
}

TemporalRecommender::TemporalRecommender(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

void TemporalRecommender::build(std::uint64_t seed) {
  Rng rng(derive_seed(seed, Stream::init));
  const std::size_t h = config_.hidden;
  const std::size_t d = config_.head_dim();
  const double s = config_.init_std;

  Tensor items = truncated_normal({config_.num_items + 2, h}, s, rng);
  std::fill_n(items.data().begin(), h, 0.0);
  item_table_ = &params_.add("item_embedding", std::move(items));
  item_table_->frozen_rows = {data::kPadToken};

  tables_.t_min = config_.t_min;
  if (config_.uses(EmbeddingKind::day)) {
    tables_.day = &params_.add("day_table", truncated_normal({config_.num_days, d}, s, rng));
  }
  if (config_.uses(EmbeddingKind::pos)) {
    tables_.pos = &params_.add("pos_table", truncated_normal({config_.max_len, d}, s, rng));
  }
  if (config_.uses(EmbeddingKind::con)) {
    tables_.con = &params_.add("con_vector", truncated_normal({1, d}, s, rng));
  }

  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string lp = "layer" + std::to_string(l) + ".";
    LayerParams layer;
    for (std::size_t i = 0; i < config_.heads.size(); ++i) {
      const std::string hp = lp + "head" + std::to_string(i) + ".";
      HeadParams head;
      head.kind = config_.heads[i].kind;
      head.q_item = &params_.add(hp + "q_item", truncated_normal({h, d}, s, rng));
      head.k_item = &params_.add(hp + "k_item", truncated_normal({h, d}, s, rng));
      head.v_item = &params_.add(hp + "v_item", truncated_normal({h, d}, s, rng));
      if (temporal::is_relative(head.kind)) {
        head.k_rel = &params_.add(hp + "k_rel", truncated_normal({d, d}, s, rng));
        head.bias_item = &params_.add(hp + "bias_item", Tensor({d}));
        head.bias_rel = &params_.add(hp + "bias_rel", Tensor({d}));
      } else {
        head.q_pos = &params_.add(hp + "q_pos", truncated_normal({d, d}, s, rng));
        head.k_pos = &params_.add(hp + "k_pos", truncated_normal({d, d}, s, rng));
      }
      layer.heads.push_back(head);
    }
    layer.out_proj = &params_.add(lp + "out_proj", truncated_normal({h, h}, s, rng));
    layer.ffn_w1 = &params_.add(lp + "ffn.w1", truncated_normal({h, 4 * h}, s, rng));
    layer.ffn_b1 = &params_.add(lp + "ffn.b1", Tensor({4 * h}));
    layer.ffn_w2 = &params_.add(lp + "ffn.w2", truncated_normal({4 * h, h}, s, rng));
    layer.ffn_b2 = &params_.add(lp + "ffn.b2", Tensor({h}));
    layer.ln1_gain = &params_.add(lp + "ln1.gain", Tensor({h}, 1.0));
    layer.ln1_offset = &params_.add(lp + "ln1.offset", Tensor({h}));
    layer.ln2_gain = &params_.add(lp + "ln2.gain", Tensor({h}, 1.0));
    layer.ln2_offset = &params_.add(lp + "ln2.offset", Tensor({h}));
    layers_.push_back(std::move(layer));
  }

  pred_w_ = &params_.add("pred.w", truncated_normal({h, h}, s, rng));
  pred_b_ = &params_.add("pred.b", Tensor({h}));
  if (config_.output_bias) out_bias_ = &params_.add("pred.out_bias", Tensor({config_.num_items}));
}

void TemporalRecommender::check_inputs(std::span<const data::ItemIndex> items,
                                 std::span<const data::Timestamp> timestamps) const {
  if (items.size() != timestamps.size()) throw Error("items/timestamps length mismatch");
  if (items.empty() || items.size() > config_.max_len) {
    throw Error("sequence length " + std::to_string(items.size()) + " outside 1.." +
                std::to_string(config_.max_len));
  }
  const std::size_t limit = config_.num_items + 2;
  for (data::ItemIndex v : items) {
    if (v >= limit) throw Error("item index " + std::to_string(v) + " out of range");
  }
}

TemporalEmbeddingSet TemporalRecommender::embeddings(Tape& tape, std::span<const data::Timestamp> t) const {
  TemporalEmbeddingSet set;
  const std::size_t n = t.size();
  const std::size_t d = config_.head_dim();
  Tensor diff;
  bool have_diff = false;
  for (const HeadSpec& spec : config_.heads) {
    if (spec.relative()) {
      if (set.relative.count(spec.kind)) continue;
      if (!have_diff) {
        diff = temporal::time_difference_matrix(t, config_.tau);
        have_diff = true;
      }
      set.relative.emplace(spec.kind, temporal::relative_encode(spec.kind, diff, config_.freq, d));
    } else {
      if (set.absolute.count(spec.kind)) continue;
      switch (spec.kind) {
        case EmbeddingKind::day: set.absolute.emplace(spec.kind, temporal::day_embed(tape, t, tables_)); break;
        case EmbeddingKind::pos: set.absolute.emplace(spec.kind, temporal::pos_embed(tape, n, tables_)); break;
        case EmbeddingKind::con: set.absolute.emplace(spec.kind, temporal::con_embed(tape, n, tables_)); break;
        default: break;
      }
    }
  }
  return set;
}

Var TemporalRecommender::encode(Tape& tape, std::span<const data::ItemIndex> items,
                          std::span<const data::Timestamp> timestamps, Context& ctx) const {
  check_inputs(items, timestamps);
  if (ctx.training && ctx.dropout > 0.0 && ctx.rng == nullptr) {
    throw Error("training context with dropout needs an rng");
  }
  const Mask mask = attention_mask(items);
  TemporalEmbeddingSet emb = embeddings(tape, timestamps);
  Var x = ops::gather_rows(tape.param(*item_table_), items);
  for (const LayerParams& layer : layers_) {
    x = encoder_layer(tape, x, emb, layer, mask, ctx, config_.ln_eps);
  }
  return x;
}

Var TemporalRecommender::logits(Tape& tape, Var encoded, std::span<const std::size_t> rows) const {
  std::vector<data::ItemIndex> all(config_.num_items);
  std::iota(all.begin(), all.end(), data::ItemIndex{1});
  Var selected = ops::gather_rows(encoded, rows);
  Var hidden = ops::gelu(ops::add_row(ops::matmul(selected, tape.param(*pred_w_)), tape.param(*pred_b_)));
  Var scores = ops::matmul_nt(hidden, ops::gather_rows(tape.param(*item_table_), all));
  if (out_bias_ != nullptr) scores = ops::add_row(scores, tape.param(*out_bias_));
  return scores;
}

Var TemporalRecommender::candidate_scores(Tape& tape, Var encoded, std::size_t row,
                                    std::span<const data::ItemIndex> items) const {
  for (data::ItemIndex v : items) {
    if (v == 0 || v > config_.num_items) throw Error("candidate item out of range");
  }
  const std::size_t r[1] = {row};
  Var selected = ops::gather_rows(encoded, r);
  Var hidden = ops::gelu(ops::add_row(ops::matmul(selected, tape.param(*pred_w_)), tape.param(*pred_b_)));
  Var scores = ops::matmul_nt(hidden, ops::gather_rows(tape.param(*item_table_), items));
  if (out_bias_ != nullptr) {
    std::vector<std::size_t> cols(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) cols[i] = items[i] - 1;
    scores = ops::add_row(scores, ops::take(tape.param(*out_bias_), cols));
  }
  return scores;
}

Var TemporalRecommender::batch_loss(Tape& tape, const data::MaskedBatch& batch, Context& ctx) const {
  const std::size_t masked = batch.masked_count();
  if (masked == 0) throw Error("batch has no masked positions");
  Var total = tape.constant(Tensor::scalar(0.0));
  bool first = true;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const data::MaskedRow row = batch.row(b);
    std::vector<std::size_t> rows;
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < row.labels.size(); ++i) {
      if (row.labels[i] == data::kIgnoreLabel) continue;
      rows.push_back(i);
      targets.push_back(static_cast<std::size_t>(row.labels[i] - 1));
    }
    if (rows.empty()) continue;
    Var encoded = encode(tape, row.items, row.timestamps, ctx);
    Var part = ops::cross_entropy_sum(logits(tape, encoded, rows), targets);
    total = first ? part : ops::add(total, part);
    first = false;
  }
  return ops::scale(total, 1.0 / static_cast<double>(masked));
}

Tensor TemporalRecommender::forward_logits(std::span<const data::ItemIndex> items,
                                     std::span<const data::Timestamp> timestamps) const {
  Tape tape(false);
  Context ctx;
  Var encoded = encode(tape, items, timestamps, ctx);
  std::vector<std::size_t> rows(items.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return logits(tape, encoded, rows).value();
}

Tensor TemporalRecommender::forward(std::span<const data::ItemIndex> items,
                              std::span<const data::Timestamp> timestamps) const {
  return softmax(forward_logits(items, timestamps));
}

std::vector<double> TemporalRecommender::score_candidates(const data::Window& window, std::size_t position,
                                                    std::span<const data::ItemIndex> candidates) const {
  Tape tape(false);
  Context ctx;
  Var encoded = encode(tape, window.items, window.timestamps, ctx);
  const Tensor& s = candidate_scores(tape, encoded, position, candidates).value();
  return {s.data().begin(), s.data().end()};
}

void TemporalRecommender::save(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, std::string>>& extra_meta) const {
  auto meta = config_.to_meta();
  meta.insert(meta.end(), extra_meta.begin(), extra_meta.end());
  write_checkpoint(path, meta, params_);
}

TemporalRecommender TemporalRecommender::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  TemporalRecommender model(ModelConfig::from_meta(ckpt.meta), 0);
  load_parameters(ckpt, model.params_);
  return model;
}

}  // namespace seqrec::model
