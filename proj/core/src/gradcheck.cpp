#include "seqrec/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace seqrec {
namespace {

double evaluate(const LossBuilder& loss_fn) {
  Tape tape(false);
  return loss_fn(tape).value().item();
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

void compute_gradients(const LossBuilder& loss_fn, std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  Var loss = loss_fn(tape);
  tape.backward(loss);
}

std::vector<GradCheckResult> finite_difference_check(
    const LossBuilder& loss_fn, std::span<Parameter* const> params,
    const GradCheckOptions& options,
    const std::function<void(std::span<Parameter* const>)>& analytic_override) {
  const double base_a = evaluate(loss_fn);
  const double base_b = evaluate(loss_fn);
  if (base_a != base_b) {
    throw Error("finite_difference_check: loss function is not deterministic");
  }

  if (analytic_override) {
    analytic_override(params);
  } else {
    compute_gradients(loss_fn, params);
  }

  std::mt19937_64 rng(options.seed);
  std::vector<GradCheckResult> results;
  results.reserve(params.size());
  for (Parameter* p : params) {
    GradCheckResult res;
    res.name = p->name;
    std::vector<std::size_t> entries(p->value.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (options.max_entries_per_param > 0 && entries.size() > options.max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_param);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t i : entries) {
      const double saved = p->value[i];
      p->value[i] = saved + options.eps;
      const double up = evaluate(loss_fn);
      p->value[i] = saved - options.eps;
      const double down = evaluate(loss_fn);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double analytic = p->grad[i];
      res.max_rel_error = std::max(res.max_rel_error,
                                   relative_error(analytic, numeric, options.denominator_floor));
      res.max_abs_error = std::max(res.max_abs_error, std::abs(analytic - numeric));
      ++res.checked;
    }
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace seqrec
