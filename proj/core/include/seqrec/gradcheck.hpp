#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seqrec/autograd.hpp"

namespace seqrec {

/// Builds a scalar loss on the given tape. Must be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// Entries checked per parameter; 0 checks every entry.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
  /// Lower bound on the denominator of the relative error.
  double denominator_floor = 1e-6;
};

struct GradCheckResult {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Analytic gradients (one backward pass on a fresh tape).
void compute_gradients(const LossBuilder& loss_fn, std::span<Parameter* const> params);

/// Compares analytic gradients against central differences
/// (f(x + eps) - f(x - eps)) / (2 eps) entry by entry. Large tensors are
/// subsampled with a seeded choice when `max_entries_per_param` is set.
///
/// `analytic_override`, when given, replaces the backward pass; this is how
/// a corrupted gradient can be fed in to exercise the detector.
std::vector<GradCheckResult> finite_difference_check(
    const LossBuilder& loss_fn, std::span<Parameter* const> params,
    const GradCheckOptions& options = {},
    const std::function<void(std::span<Parameter* const>)>& analytic_override = {});

}  // namespace seqrec
