// SPDX-License-Identifier: Apache-2.0
#include "hindsight/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace hindsight::ad {

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(t.shape()));
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(kernels::matmul(a.value(), b.value()), {a, b}, "matmul",
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) t.grad(ia).add_(kernels::matmul_nt(g, t.value(ib)));
                       if (t.requires_grad(ib)) t.grad(ib).add_(kernels::matmul_tn(t.value(ia), g));
                     });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return tape.record(kernels::matmul_nt(a.value(), b.value()), {a, b}, "matmul_nt",
                     [ia, ib](Tape<T>& t, const Tensor<T>& g) {
                       if (t.requires_grad(ia)) t.grad(ia).add_(kernels::matmul(g, t.value(ib)));
                       if (t.requires_grad(ib)) t.grad(ib).add_(kernels::matmul_tn(g, t.value(ia)));
                     });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<std::type_identity_t<Var<T>>> bias) {
  Tape<T>& tape = *x.tape;
  const std::size_t ix = x.id, iw = w.id;
  const std::optional<std::size_t> ib = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
  Tensor<T> y = kernels::linear(x.value(), w.value(), bias ? bias->value() : Tensor<T>());
  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(y), inputs, "linear", [ix, iw, ib](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ix)) t.grad(ix).add_(kernels::matmul(g, t.value(iw)));
    if (t.requires_grad(iw)) t.grad(iw).add_(kernels::matmul_tn(g, t.value(ix)));
    if (ib && t.requires_grad(*ib)) {
      Tensor<T>& gb = t.grad(*ib);
      const std::size_t rows = g.dim(0), out = g.dim(1);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
      }
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y = a.value();
  y.add_(b.value());
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(y), {a, b}, "add", [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) t.grad(ia).add_(g);
    if (t.requires_grad(ib)) t.grad(ib).add_(g);
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> y = a.value();
  for (auto& v : y.vec()) v *= factor;
  const std::size_t ia = a.id;
  return a.tape->record(std::move(y), {a}, "scale", [ia, factor](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  const std::size_t ix = x.id;
  return x.tape->record(kernels::relu(x.value()), {x}, "relu", [ix](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(ix);
    Tensor<T>& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const std::size_t ix = x.id;
  auto y = std::make_shared<Tensor<T>>(kernels::softmax(x.value()));
  Tensor<T> value = *y;
  return x.tape->record(std::move(value), {x}, "softmax_rows", [ix, y](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad(ix);
    const std::size_t n = y->shape().back();
    const std::size_t rows = y->size() / n;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y->data() + r * n;
      const T* gr = g.data() + r * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += yr[i] * (gr[i] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> shift, double eps) {
  auto res = std::make_shared<kernels::LayerNormResult<T>>(kernels::layer_norm(x.value(), gain.value(), shift.value(), eps));
  Tensor<T> value = res->out;
  const std::size_t ix = x.id, ig = gain.id, is = shift.id;
  return x.tape->record(std::move(value), {x, gain, shift}, "layer_norm",
                        [ix, ig, is, res](Tape<T>& t, const Tensor<T>& g) {
                          const Tensor<T>& gain_v = t.value(ig);
                          const std::size_t n = gain_v.size();
                          const std::size_t rows = g.size() / n;
                          const Tensor<T>& xh = res->normalized;
                          if (t.requires_grad(ig)) {
                            Tensor<T>& gg = t.grad(ig);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t i = 0; i < n; ++i) gg[i] += g[r * n + i] * xh[r * n + i];
                          }
                          if (t.requires_grad(is)) {
                            Tensor<T>& gs = t.grad(is);
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t i = 0; i < n; ++i) gs[i] += g[r * n + i];
                          }
                          if (t.requires_grad(ix)) {
                            Tensor<T>& gx = t.grad(ix);
                            std::vector<T> dxh(n);
                            for (std::size_t r = 0; r < rows; ++r) {
                              T mean_d = 0, mean_dx = 0;
                              for (std::size_t i = 0; i < n; ++i) {
                                dxh[i] = g[r * n + i] * gain_v[i];
                                mean_d += dxh[i];
                                mean_dx += dxh[i] * xh[r * n + i];
                              }
                              mean_d /= static_cast<T>(n);
                              mean_dx /= static_cast<T>(n);
                              const T rstd = res->rstd[r];
                              for (std::size_t i = 0; i < n; ++i)
                                gx[r * n + i] += rstd * (dxh[i] - mean_d - xh[r * n + i] * mean_dx);
                            }
                          }
                        });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].shape().at(0);
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.shape()[0] != rows) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.shape()[1]);
    ids.push_back(p.id);
    total += p.shape()[1];
  }
  Tensor<T> y(Shape{rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[k], widths[k], y.data() + r * total + off);
    off += widths[k];
  }
  return parts[0].tape->record(std::move(y), parts, "concat_cols",
                               [ids, widths, rows, total](Tape<T>& t, const Tensor<T>& g) {
                                 std::size_t o = 0;
                                 for (std::size_t k = 0; k < ids.size(); ++k) {
                                   if (t.requires_grad(ids[k])) {
                                     Tensor<T>& gp = t.grad(ids[k]);
                                     for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < widths[k]; ++c)
                                         gp[r * widths[k] + c] += g[r * total + o + c];
                                   }
                                   o += widths[k];
                                 }
                               });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  require_matrix(a.value(), "slice_cols");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(a.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> y(Shape{rows, w});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(a.value().data() + r * cols + begin, w, y.data() + r * w);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(y), {a}, "slice_cols", [ia, rows, cols, begin, w](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
  });
}

template <typename T>
Var<T> repeat_rows(Var<T> a, std::size_t times) {
  require_matrix(a.value(), "repeat_rows");
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  Tensor<T> y(Shape{rows * times, cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < times; ++k)
      std::copy_n(a.value().data() + r * cols, cols, y.data() + (r * times + k) * cols);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(y), {a}, "repeat_rows", [ia, rows, cols, times](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < times; ++k)
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[(r * times + k) * cols + c];
  });
}

template <typename T>
Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows) {
  require_matrix(a.value(), "gather_rows");
  const std::size_t n = a.shape()[0], cols = a.shape()[1];
  Tensor<T> y(Shape{rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw DimensionError("gather_rows: row index out of range for " + shape_str(a.shape()));
    std::copy_n(a.value().data() + rows[i] * cols, cols, y.data() + i * cols);
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(y), {a}, "gather_rows", [ia, rows, cols](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) ga[rows[i] * cols + c] += g[i * cols + c];
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  const std::size_t ia = a.id;
  Shape original = a.shape();
  return a.tape->record(a.value().reshaped(std::move(shape)), {a}, "reshape",
                        [ia, original](Tape<T>& t, const Tensor<T>& g) {
                          t.grad(ia).add_(g.reshaped(original));
                        });
}

template <typename T>
Var<T> gate_combine(Var<T> gate, Var<T> features) {
  require_matrix(gate.value(), "gate_combine gate");
  require_matrix(features.value(), "gate_combine features");
  const std::size_t P = gate.shape()[0], k = gate.shape()[1], d = features.shape()[1];
  if (features.shape()[0] != P * k) {
    throw DimensionError("gate_combine: gate " + shape_str(gate.shape()) + " incompatible with features " +
                         shape_str(features.shape()));
  }
  const Tensor<T>& c = gate.value();
  const Tensor<T>& f = features.value();
  Tensor<T> y(Shape{P, d});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t j = 0; j < k; ++j) {
      const T w = c[p * k + j];
      const T* fr = f.data() + (p * k + j) * d;
      for (std::size_t t = 0; t < d; ++t) y[p * d + t] += w * fr[t];
    }
  const std::size_t ic = gate.id, iff = features.id;
  return gate.tape->record(std::move(y), {gate, features}, "gate_combine",
                           [ic, iff, P, k, d](Tape<T>& t, const Tensor<T>& g) {
                             const Tensor<T>& cv = t.value(ic);
                             const Tensor<T>& fv = t.value(iff);
                             if (t.requires_grad(ic)) {
                               Tensor<T>& gc = t.grad(ic);
                               for (std::size_t p = 0; p < P; ++p)
                                 for (std::size_t j = 0; j < k; ++j) {
                                   T acc = 0;
                                   for (std::size_t q = 0; q < d; ++q) acc += g[p * d + q] * fv[(p * k + j) * d + q];
                                   gc[p * k + j] += acc;
                                 }
                             }
                             if (t.requires_grad(iff)) {
                               Tensor<T>& gf = t.grad(iff);
                               for (std::size_t p = 0; p < P; ++p)
                                 for (std::size_t j = 0; j < k; ++j)
                                   for (std::size_t q = 0; q < d; ++q)
                                     gf[(p * k + j) * d + q] += cv[p * k + j] * g[p * d + q];
                             }
                           });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = 0;
  for (auto v : a.value().vec()) acc += v;
  const std::size_t ia = a.id;
  return a.tape->record(Tensor<T>::scalar(acc), {a}, "sum", [ia](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (auto& v : ga.vec()) v += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> mse(Var<T> pred, const Tensor<T>& target) {
  require_same_shape(pred.shape(), target.shape(), "mse");
  const Tensor<T>& p = pred.value();
  const T n = static_cast<T>(p.size());
  T acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - target[i]) * (p[i] - target[i]);
  const std::size_t ip = pred.id;
  auto tgt = std::make_shared<Tensor<T>>(target);
  return pred.tape->record(Tensor<T>::scalar(acc / n), {pred}, "mse", [ip, tgt, n](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gp = t.grad(ip);
    const Tensor<T>& pv = t.value(ip);
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g[0] * T(2) * (pv[i] - (*tgt)[i]) / n;
  });
}

template <typename T>
Var<T> divergence_loss(Var<T> gate) {
  require_matrix(gate.value(), "divergence_loss");
  const std::size_t rows = gate.shape()[0], k = gate.shape()[1];
  const Tensor<T>& c = gate.value();
  const T clamp = static_cast<T>(kGateClamp);
  const T kk = static_cast<T>(k);
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    T kl = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const T v = c[r * k + j];
      kl += v * std::log(std::max(v, clamp) * kk);
    }
    total += -kl;
  }
  const std::size_t ig = gate.id;
  return gate.tape->record(Tensor<T>::scalar(total / static_cast<T>(rows)), {gate}, "divergence_loss",
                           [ig, rows, k, clamp, kk](Tape<T>& t, const Tensor<T>& g) {
                             const Tensor<T>& cv = t.value(ig);
                             Tensor<T>& gc = t.grad(ig);
                             const T s = g[0] / static_cast<T>(rows);
                             for (std::size_t i = 0; i < rows * k; ++i) {
                               const T v = cv[i];
                               const T d = v >= clamp ? std::log(v * kk) + T(1) : std::log(clamp * kk);
                               gc[i] += -s * d;
                             }
                           });
}

template <typename T>
Var<T> conv2d_valid(Var<T> input, Var<T> kernels, Var<T> bias) {
  const std::size_t ii = input.id, ik = kernels.id, ib = bias.id;
  return input.tape->record(kernels::conv2d_valid(input.value(), kernels.value(), bias.value()), {input, kernels, bias},
                            "conv2d_valid", [ii, ik, ib](Tape<T>& t, const Tensor<T>& g) {
                              Tensor<T>* gi = t.requires_grad(ii) ? &t.grad(ii) : nullptr;
                              Tensor<T>* gk = t.requires_grad(ik) ? &t.grad(ik) : nullptr;
                              Tensor<T>* gb = t.requires_grad(ib) ? &t.grad(ib) : nullptr;
                              kernels::conv2d_valid_backward(t.value(ii), t.value(ik), g, gi, gk, gb);
                            });
}

template <typename T>
Var<T> maxpool2(Var<T> input) {
  auto res = kernels::maxpool2(input.value());
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(res.argmax));
  const std::size_t ii = input.id;
  return input.tape->record(std::move(res.out), {input}, "maxpool2", [ii, argmax](Tape<T>& t, const Tensor<T>& g) {
    kernels::maxpool2_backward(*argmax, g, t.grad(ii));
  });
}

#define HINDSIGHT_INSTANTIATE_OPS(T)                                                      \
  template Var<T> matmul(Var<T>, Var<T>);                                                 \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                              \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                          \
  template Var<T> add(Var<T>, Var<T>);                                                    \
  template Var<T> scale(Var<T>, T);                                                       \
  template Var<T> relu(Var<T>);                                                           \
  template Var<T> softmax_rows(Var<T>);                                                   \
  template Var<T> layer_norm_rows(Var<T>, Var<T>, Var<T>, double);                        \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> repeat_rows(Var<T>, std::size_t);                                       \
  template Var<T> gather_rows(Var<T>, const std::vector<std::size_t>&);                   \
  template Var<T> reshape(Var<T>, Shape);                                                 \
  template Var<T> gate_combine(Var<T>, Var<T>);                                           \
  template Var<T> sum(Var<T>);                                                            \
  template Var<T> mean(Var<T>);                                                           \
  template Var<T> mse(Var<T>, const Tensor<T>&);                                          \
  template Var<T> divergence_loss(Var<T>);                                                \
  template Var<T> conv2d_valid(Var<T>, Var<T>, Var<T>);                                   \
  template Var<T> maxpool2(Var<T>);

HINDSIGHT_INSTANTIATE_OPS(float)
HINDSIGHT_INSTANTIATE_OPS(double)

#undef HINDSIGHT_INSTANTIATE_OPS

}  // namespace hindsight::ad
