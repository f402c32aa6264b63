#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqrec/autograd.hpp"
#include "seqrec/data.hpp"

namespace seqrec::temporal {

/// The six embedding schemes. Declaration order is the canonical ordering
/// used in combination names (con < day < pos < sin < exp < log).
enum class EmbeddingKind { con, day, pos, sin, exp, log };

inline constexpr std::array<EmbeddingKind, 6> kAllKinds{
    EmbeddingKind::con, EmbeddingKind::day, EmbeddingKind::pos,
    EmbeddingKind::sin, EmbeddingKind::exp, EmbeddingKind::log};

std::string_view to_string(EmbeddingKind kind);
/// Throws `Error("unknown embedding kind: ...")`.
EmbeddingKind parse_kind(std::string_view name);
constexpr bool is_relative(EmbeddingKind kind) {
  return kind == EmbeddingKind::sin || kind == EmbeddingKind::exp || kind == EmbeddingKind::log;
}

/// Kinds sorted canonically and joined with '+', e.g. "day+pos+sin+log".
std::string combo_name(std::span<const EmbeddingKind> kinds);
/// Parses a '+'-joined list, keeping the given order.
std::vector<EmbeddingKind> parse_combo(std::string_view text);

inline constexpr double kSecondsPerDay = 86400.0;

/// d[a][b] = (t[a] - t[b]) / tau.
Tensor time_difference_matrix(std::span<const data::Timestamp> t, double tau);

// Fixed kernels over an N x N difference matrix; results are N x N x width.
Tensor sin_encode(const Tensor& diff, double freq, std::size_t width);
Tensor exp_encode(const Tensor& diff, double freq, std::size_t width);
Tensor log_encode(const Tensor& diff, double freq, std::size_t width);
Tensor relative_encode(EmbeddingKind kind, const Tensor& diff, double freq, std::size_t width);

/// Number of day buckets covering [t_min, t_max] plus `slack` extra rows.
std::size_t day_table_size(data::Timestamp t_min, data::Timestamp t_max, std::size_t slack);
/// floor((t - t_min) / 86400) clamped to [0, num_days - 1].
std::size_t day_index(data::Timestamp t, data::Timestamp t_min, std::size_t num_days);

/// Learnable absolute tables, owned by the model's ParameterSet.
struct AbsoluteTables {
  Parameter* day = nullptr;  // |D| x width
  Parameter* pos = nullptr;  // N x width
  Parameter* con = nullptr;  // 1 x width
  data::Timestamp t_min = 0;
};

Var day_embed(Tape& tape, std::span<const data::Timestamp> t, const AbsoluteTables& tables);
Var pos_embed(Tape& tape, std::size_t length, const AbsoluteTables& tables);
Var con_embed(Tape& tape, std::size_t length, const AbsoluteTables& tables);

}  // namespace seqrec::temporal
