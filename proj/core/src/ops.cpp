#include "seqrec/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace seqrec::ops {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw Error(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw Error(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw Error("operands recorded on different tapes");
}

Tensor finite(Tensor t, const char* op) {
  t.require_finite(op);
  return t;
}

// out (M x N) += a (M x K) * b^T where b is (N x K).
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      out[i * n + j] += acc;
    }
  }
}

// out (M x N) += a (M x K) * b (K x N).
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

// out (K x N) += a^T * b where a is (M x K) and b is (M x N).
void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* br = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* o = out + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "add");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->record(finite(std::move(out), "add"), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "sub");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape->record(finite(std::move(out), "sub"), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, g);
    Tensor neg(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    t.accumulate(b, neg);
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->record(finite(std::move(out), "mul"), {a, b}, [a, b](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var scale(Var a, double factor) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.tape->record(finite(std::move(out), "scale"), {a},
                        [a, factor](Tape& t, const Tensor&, const Tensor& g) {
                          Tensor ga(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * factor;
                          t.accumulate(a, ga);
                        });
}

Var add_row(Var a, Var bias) {
  require_same_tape(a, bias);
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  const std::size_t cols = av.cols();
  if (bv.size() != cols) {
    throw Error("add_row: bias length " + std::to_string(bv.size()) + " != columns " +
                std::to_string(cols));
  }
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % cols];
  return a.tape->record(finite(std::move(out), "add_row"), {a, bias},
                        [a, bias, cols](Tape& t, const Tensor&, const Tensor& g) {
                          t.accumulate(a, g);
                          if (!t.requires_grad(bias)) return;
                          Tensor gb(t.value(bias).shape());
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i % cols] += g[i];
                          t.accumulate(bias, gb);
                        });
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.dim(1) != bv.dim(0)) {
    throw Error("matmul: shape mismatch " + shape_string(av.shape()) + " x " +
                shape_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.tape->record(finite(std::move(out), "matmul"), {a, b},
                        [a, b, m, k, n](Tape& t, const Tensor&, const Tensor& g) {
                          if (t.requires_grad(a)) {
                            // dA = G * B^T
                            Tensor ga({m, k});
                            gemm_nt(g.data().data(), t.value(b).data().data(),
                                    ga.data().data(), m, n, k);
                            t.accumulate(a, ga);
                          }
                          if (t.requires_grad(b)) {
                            // dB = A^T * G
                            Tensor gb({k, n});
                            gemm_tn(t.value(a).data().data(), g.data().data(),
                                    gb.data().data(), m, k, n);
                            t.accumulate(b, gb);
                          }
                        });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.dim(1) != bv.dim(1)) {
    throw Error("matmul_nt: shape mismatch " + shape_string(av.shape()) + " x " +
                shape_string(bv.shape()) + "^T");
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out({m, n});
  gemm_nt(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.tape->record(finite(std::move(out), "matmul_nt"), {a, b},
                        [a, b, m, k, n](Tape& t, const Tensor&, const Tensor& g) {
                          if (t.requires_grad(a)) {
                            // dA = G * B
                            Tensor ga({m, k});
                            gemm_nn(g.data().data(), t.value(b).data().data(),
                                    ga.data().data(), m, n, k);
                            t.accumulate(a, ga);
                          }
                          if (t.requires_grad(b)) {
                            // dB = G^T * A
                            Tensor gb({n, k});
                            gemm_tn(g.data().data(), t.value(a).data().data(),
                                    gb.data().data(), m, n, k);
                            t.accumulate(b, gb);
                          }
                        });
}

Var gelu(Var x) {
  Tensor out = seqrec::gelu(x.value());
  return x.tape->record(finite(std::move(out), "gelu"), {x}, [x](Tape& t, const Tensor&, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * gelu_derivative(xv[i]);
    t.accumulate(x, gx);
  });
}

Var layer_norm(Var x, Var gain, Var offset, double eps) {
  Tensor out = seqrec::layer_norm(x.value(), gain.value(), offset.value(), eps);
  return x.tape->record(
      finite(std::move(out), "layer_norm"), {x, gain, offset},
      [x, gain, offset, eps](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& xv = t.value(x);
        const Tensor& gv = t.value(gain);
        const std::size_t cols = xv.cols();
        const double inv_n = 1.0 / static_cast<double>(cols);
        Tensor gx(xv.shape());
        Tensor ggain(gv.shape());
        Tensor goffset(gv.shape());
        std::vector<double> xhat(cols), dxhat(cols);
        for (std::size_t r = 0; r < xv.rows(); ++r) {
          auto in = xv.row(r);
          auto up = g.row(r);
          double mean = 0.0;
          for (double v : in) mean += v;
          mean *= inv_n;
          double var = 0.0;
          for (double v : in) var += (v - mean) * (v - mean);
          var *= inv_n;
          const double denom = std::sqrt(var + eps);
          if (denom == 0.0) {
            for (std::size_t c = 0; c < cols; ++c) goffset[c] += up[c];
            continue;
          }
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            xhat[c] = (in[c] - mean) / denom;
            dxhat[c] = up[c] * gv[c];
            ggain[c] += up[c] * xhat[c];
            goffset[c] += up[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[c];
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          auto gr = gx.row(r);
          for (std::size_t c = 0; c < cols; ++c) {
            gr[c] = (dxhat[c] - mean_d - xhat[c] * mean_dx) / denom;
          }
        }
        t.accumulate(x, gx);
        t.accumulate(gain, ggain);
        t.accumulate(offset, goffset);
      });
}

Var softmax_masked(Var logits, const Mask& mask) {
  Tensor out = seqrec::softmax_masked(logits.value(), mask);
  return logits.tape->record(std::move(out), {logits},
                             [logits](Tape& t, const Tensor& probs, const Tensor& g) {
                               const std::size_t cols = probs.cols();
                               Tensor gl(probs.shape());
                               for (std::size_t r = 0; r < probs.rows(); ++r) {
                                 const std::size_t base = r * cols;
                                 double inner = 0.0;
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   inner += probs[base + c] * g[base + c];
                                 }
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   gl[base + c] = probs[base + c] * (g[base + c] - inner);
                                 }
                               }
                               t.accumulate(logits, gl);
                             });
}

Var dropout(Var x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw Error("dropout rate must lie in [0, 1)");
  if (p == 0.0) return x;
  const Tensor& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - p);
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> factor(xv.size());
  for (double& f : factor) f = keep(rng) ? keep_scale : 0.0;
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor[i];
  return x.tape->record(std::move(out), {x},
                        [x, factor = std::move(factor)](Tape& t, const Tensor&, const Tensor& g) {
                          Tensor gx(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * factor[i];
                          t.accumulate(x, gx);
                        });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  Tape* tape = parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape != tape) throw Error("operands recorded on different tapes");
    const Tensor& v = p.value();
    require_matrix(v, "concat_cols");
    if (v.rows() != rows) throw Error("concat_cols: row count mismatch");
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.row(r).begin(), widths[k], out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape->record(std::move(out), parts,
                      [inputs, widths, rows, total](Tape& t, const Tensor&, const Tensor& g) {
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < inputs.size(); ++k) {
                          if (t.requires_grad(inputs[k])) {
                            Tensor gk({rows, widths[k]});
                            for (std::size_t r = 0; r < rows; ++r) {
                              std::copy_n(g.data().begin() + static_cast<std::ptrdiff_t>(r * total + offset),
                                          widths[k], gk.row(r).begin());
                            }
                            t.accumulate(inputs[k], gk);
                          }
                          offset += widths[k];
                        }
                      });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Tensor& tv = table.value();
  require_matrix(tv, "gather_rows");
  const std::size_t rows = tv.rows(), cols = tv.cols();
  Tensor out({indices.size(), cols});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows) {
      throw Error("gather_rows: index " + std::to_string(indices[i]) + " out of range for " +
                  std::to_string(rows) + " rows");
    }
    std::copy_n(tv.row(indices[i]).begin(), cols, out.row(i).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape->record(std::move(out), {table},
                            [table, idx = std::move(idx), rows, cols](Tape& t, const Tensor&,
                                                                       const Tensor& g) {
                              Tensor& slot = t.grad_slot(table);
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                const double* src = g.data().data() + i * cols;
                                double* dst = slot.data().data() + idx[i] * cols;
                                for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                              }
                              (void)rows;
                            });
}

Var take(Var values, std::span<const std::size_t> indices) {
  const Tensor& v = values.value();
  Tensor out({indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v.size()) throw Error("take: index out of range");
    out[i] = v[indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return values.tape->record(std::move(out), {values},
                             [values, idx = std::move(idx)](Tape& t, const Tensor&, const Tensor& g) {
                               Tensor& slot = t.grad_slot(values);
                               for (std::size_t i = 0; i < idx.size(); ++i) slot[idx[i]] += g[i];
                             });
}

Var repeat_rows(Var vec, std::size_t n) {
  const Tensor& v = vec.value();
  if (!(v.rank() == 1 || (v.rank() == 2 && v.dim(0) == 1))) {
    throw Error("repeat_rows: expected a vector, got " + shape_string(v.shape()));
  }
  const std::size_t cols = v.size();
  Tensor out({n, cols});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(v.data().begin(), cols, out.row(r).begin());
  return vec.tape->record(std::move(out), {vec}, [vec, n, cols](Tape& t, const Tensor&, const Tensor& g) {
    Tensor gv(t.value(vec).shape());
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
    }
    t.accumulate(vec, gv);
  });
}

Var pairwise_dot(Var a_rows, const Tensor& pairs) {
  const Tensor& av = a_rows.value();
  require_matrix(av, "pairwise_dot");
  const std::size_t n = av.rows(), d = av.cols();
  if (pairs.rank() != 3 || pairs.dim(0) != n || pairs.dim(1) != n || pairs.dim(2) != d) {
    throw Error("pairwise_dot: expected pairs of shape " + shape_string({n, n, d}) + ", got " +
                shape_string(pairs.shape()));
  }
  Tensor out({n, n});
  for (std::size_t a = 0; a < n; ++a) {
    const double* ar = av.data().data() + a * d;
    for (std::size_t b = 0; b < n; ++b) {
      const double* e = pairs.data().data() + (a * n + b) * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += ar[c] * e[c];
      out[a * n + b] = acc;
    }
  }
  // `pairs` is an input constant; the closure keeps its own copy.
  return a_rows.tape->record(
      finite(std::move(out), "pairwise_dot"), {a_rows},
      [a_rows, pairs, n, d](Tape& t, const Tensor&, const Tensor& g) {
        Tensor ga({n, d});
        for (std::size_t a = 0; a < n; ++a) {
          double* gr = ga.data().data() + a * d;
          for (std::size_t b = 0; b < n; ++b) {
            const double w = g[a * n + b];
            if (w == 0.0) continue;
            const double* e = pairs.data().data() + (a * n + b) * d;
            for (std::size_t c = 0; c < d; ++c) gr[c] += w * e[c];
          }
        }
        t.accumulate(a_rows, ga);
      });
}

Var cross_entropy_sum(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy_sum");
  const std::size_t rows = lv.rows(), cols = lv.cols();
  if (targets.size() != rows) throw Error("cross_entropy_sum: one target per row required");
  Tensor probs(lv.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= cols) throw Error("cross_entropy_sum: target out of range");
    auto in = lv.row(r);
    const double top = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (double v : in) total += std::exp(v - top);
    const double log_z = top + std::log(total);
    loss += log_z - in[targets[r]];
    auto pr = probs.row(r);
    for (std::size_t c = 0; c < cols; ++c) pr[c] = std::exp(in[c] - log_z);
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return logits.tape->record(
      finite(Tensor::scalar(loss), "cross_entropy_sum"), {logits},
      [logits, probs = std::move(probs), tg = std::move(tg), cols](Tape& t, const Tensor&,
                                                                   const Tensor& g) {
        const double up = g[0];
        Tensor gl(probs.shape());
        for (std::size_t i = 0; i < probs.size(); ++i) gl[i] = up * probs[i];
        for (std::size_t r = 0; r < tg.size(); ++r) gl[r * cols + tg[r]] -= up;
        t.accumulate(logits, gl);
      });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double total = 0.0;
  for (double v : av.data()) total += v;
  return a.tape->record(finite(Tensor::scalar(total), "sum"), {a},
                        [a](Tape& t, const Tensor&, const Tensor& g) {
                          t.accumulate(a, Tensor(t.value(a).shape(), g[0]));
                        });
}

Var dot(Var a, Var b) { return sum(mul(a, b)); }

}  // namespace seqrec::ops
