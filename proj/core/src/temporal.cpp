#include "seqrec/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seqrec/ops.hpp"

namespace seqrec::temporal {
namespace {

void require_square(const Tensor& diff) {
  if (diff.rank() != 2 || diff.dim(0) != diff.dim(1)) {
    throw Error("time difference matrix must be N x N, got " + shape_string(diff.shape()));
  }
}

}  // namespace

std::string_view to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::con: return "con";
    case EmbeddingKind::day: return "day";
    case EmbeddingKind::pos: return "pos";
    case EmbeddingKind::sin: return "sin";
    case EmbeddingKind::exp: return "exp";
    case EmbeddingKind::log: return "log";
  }
  return "?";
}

EmbeddingKind parse_kind(std::string_view name) {
  for (EmbeddingKind k : kAllKinds) {
    if (to_string(k) == name) return k;
  }
  throw Error("unknown embedding kind: " + std::string(name));
}

std::string combo_name(std::span<const EmbeddingKind> kinds) {
  std::vector<EmbeddingKind> sorted(kinds.begin(), kinds.end());
  std::sort(sorted.begin(), sorted.end());
  std::string out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) out += '+';
    out += to_string(sorted[i]);
  }
  return out;
}

std::vector<EmbeddingKind> parse_combo(std::string_view text) {
  std::vector<EmbeddingKind> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t plus = text.find('+', start);
    const std::string_view part =
        text.substr(start, plus == std::string_view::npos ? std::string_view::npos : plus - start);
    out.push_back(parse_kind(part));
    if (plus == std::string_view::npos) break;
    start = plus + 1;
  }
  return out;
}

Tensor time_difference_matrix(std::span<const data::Timestamp> t, double tau) {
  if (!(tau > 0.0)) throw Error("unit time difference tau must be positive");
  const std::size_t n = t.size();
  Tensor d({n, n});
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      d[a * n + b] = static_cast<double>(t[a] - t[b]) / tau;
    }
  }
  return d;
}

Tensor sin_encode(const Tensor& diff, double freq, std::size_t width) {
  require_square(diff);
  if (width % 2 != 0) throw Error("sin encoder needs an even width, got " + std::to_string(width));
  if (!(freq > 0.0)) throw Error("freq must be positive");
  const std::size_t n = diff.dim(0);
  std::vector<double> inv(width / 2);
  for (std::size_t c = 0; c < width / 2; ++c) {
    inv[c] = std::pow(freq, static_cast<double>(2 * c) / static_cast<double>(width));
  }
  Tensor out({n, n, width});
  for (std::size_t ab = 0; ab < n * n; ++ab) {
    double* v = out.data().data() + ab * width;
    for (std::size_t c = 0; c < width / 2; ++c) {
      const double angle = diff[ab] / inv[c];
      v[2 * c] = std::sin(angle);
      v[2 * c + 1] = std::cos(angle);
    }
  }
  return out;
}

Tensor exp_encode(const Tensor& diff, double freq, std::size_t width) {
  require_square(diff);
  if (!(freq > 0.0)) throw Error("freq must be positive");
  const std::size_t n = diff.dim(0);
  Tensor out({n, n, width});
  for (std::size_t ab = 0; ab < n * n; ++ab) {
    double* v = out.data().data() + ab * width;
    for (std::size_t c = 0; c < width; ++c) {
      v[c] = std::exp(-std::abs(diff[ab]) /
                      std::pow(freq, static_cast<double>(c) / static_cast<double>(width)));
    }
  }
  return out;
}

Tensor log_encode(const Tensor& diff, double freq, std::size_t width) {
  require_square(diff);
  if (!(freq > 0.0)) throw Error("freq must be positive");
  const std::size_t n = diff.dim(0);
  Tensor out({n, n, width});
  for (std::size_t ab = 0; ab < n * n; ++ab) {
    double* v = out.data().data() + ab * width;
    for (std::size_t c = 0; c < width; ++c) {
      v[c] = std::log1p(std::abs(diff[ab]) /
                        std::pow(freq, static_cast<double>(c) / static_cast<double>(width)));
    }
  }
  return out;
}

Tensor relative_encode(EmbeddingKind kind, const Tensor& diff, double freq, std::size_t width) {
  switch (kind) {
    case EmbeddingKind::sin: return sin_encode(diff, freq, width);
    case EmbeddingKind::exp: return exp_encode(diff, freq, width);
    case EmbeddingKind::log: return log_encode(diff, freq, width);
    default: throw Error("not a relative embedding kind: " + std::string(to_string(kind)));
  }
}

std::size_t day_table_size(data::Timestamp t_min, data::Timestamp t_max, std::size_t slack) {
  if (t_max < t_min) throw Error("t_max precedes t_min");
  const auto span = static_cast<std::uint64_t>(t_max - t_min);
  const std::uint64_t days = (span + 86399) / 86400;
  return static_cast<std::size_t>(days) + std::max<std::size_t>(slack, 1);
}

std::size_t day_index(data::Timestamp t, data::Timestamp t_min, std::size_t num_days) {
  if (num_days == 0) throw Error("day table is empty");
  if (t <= t_min) return 0;
  const auto idx = static_cast<std::uint64_t>(t - t_min) / 86400;
  return static_cast<std::size_t>(std::min<std::uint64_t>(idx, num_days - 1));
}

Var day_embed(Tape& tape, std::span<const data::Timestamp> t, const AbsoluteTables& tables) {
  const std::size_t num_days = tables.day->value.dim(0);
  std::vector<std::size_t> idx(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) idx[i] = day_index(t[i], tables.t_min, num_days);
  return ops::gather_rows(tape.param(*tables.day), idx);
}

Var pos_embed(Tape& tape, std::size_t length, const AbsoluteTables& tables) {
  if (length > tables.pos->value.dim(0)) {
    throw Error("sequence length " + std::to_string(length) + " exceeds position table");
  }
  std::vector<std::size_t> idx(length);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return ops::gather_rows(tape.param(*tables.pos), idx);
}

Var con_embed(Tape& tape, std::size_t length, const AbsoluteTables& tables) {
  return ops::repeat_rows(tape.param(*tables.con), length);
}

}  // namespace seqrec::temporal
