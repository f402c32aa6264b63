#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "seqrec/autograd.hpp"

/// Differentiable operations recorded on a Tape.
///
/// Matrices are rank-2 row-major tensors; "rows" ops treat the last axis as
/// columns. Every op checks shapes and throws `seqrec::Error` on mismatch.
namespace seqrec::ops {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

/// a (R x C) + bias (C) broadcast over rows.
Var add_row(Var a, Var bias);

Var matmul(Var a, Var b);
/// a (M x K) times the transpose of b (N x K).
Var matmul_nt(Var a, Var b);

Var gelu(Var x);
Var layer_norm(Var x, Var gain, Var offset, double eps);
Var softmax_masked(Var logits, const Mask& mask);

/// Inverted dropout: keeps with probability 1-p and rescales by 1/(1-p).
Var dropout(Var x, double p, std::mt19937_64& rng);

/// Concatenates matrices with equal row count along columns.
Var concat_cols(std::span<const Var> parts);

/// Selects rows of a matrix (e.g. embedding lookup). Repeated indices
/// accumulate their gradients.
Var gather_rows(Var table, std::span<const std::size_t> indices);

/// Picks entries of a flat tensor into a vector of length indices.size().
Var take(Var values, std::span<const std::size_t> indices);

/// Stacks a length-C vector (or 1 x C matrix) n times into n x C.
Var repeat_rows(Var vec, std::size_t n);

/// out[a][b] = <a_rows[a], pairs[a][b][:]> for a constant N x N x D tensor.
Var pairwise_dot(Var a_rows, const Tensor& pairs);

/// Sum over rows of -log softmax(logits[r])[targets[r]].
Var cross_entropy_sum(Var logits, std::span<const std::size_t> targets);

Var sum(Var a);
Var dot(Var a, Var b);

}  // namespace seqrec::ops
