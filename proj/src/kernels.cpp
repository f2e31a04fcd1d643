// SPDX-License-Identifier: Apache-2.0
#include "hindsight/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "hindsight/rng.hpp"

namespace hindsight::kernels {

namespace {

std::atomic<DecisionRecorder*> g_recorder{nullptr};

/// Folds a stream of decision words into one hash.
class DecisionHash {
 public:
  explicit DecisionHash(std::uint64_t tag) : acc_(splitmix64(tag)) {}
  void bit(bool b) {
    word_ |= static_cast<std::uint64_t>(b) << fill_;
    if (++fill_ == 64) flush();
  }
  void value(std::uint64_t v) {
    word_ = v;
    fill_ = 64;
    flush();
  }
  std::uint64_t finish() {
    if (fill_ > 0) flush();
    return splitmix64(acc_);
  }

 private:
  void flush() {
    acc_ = splitmix64(acc_ ^ word_) + fill_;
    word_ = 0;
    fill_ = 0;
  }
  std::uint64_t acc_, word_ = 0;
  unsigned fill_ = 0;
};

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(s));
  }
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  Tensor<T> c(Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const T aik = a[i * n + k];
      const T* brow = b.data() + k * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(0);
  Tensor<T> c(Shape{m, p});
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a.data() + i * n;
    for (std::size_t j = 0; j < p; ++j) {
      const T* brow = b.data() + j * n;
      T acc = 0;
      for (std::size_t k = 0; k < n; ++k) acc += arow[k] * brow[k];
      c[i * p + j] = acc;
    }
  }
  return c;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), m = a.dim(1), p = b.dim(1);
  Tensor<T> c(Shape{m, p});
  for (std::size_t k = 0; k < n; ++k) {
    const T* arow = a.data() + k * m;
    const T* brow = b.data() + k * p;
    for (std::size_t i = 0; i < m; ++i) {
      const T aki = arow[i];
      T* crow = c.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  if (!bias.empty() && (bias.rank() != 1 || bias.dim(0) != w.dim(0))) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(w.shape()));
  }
  Tensor<T> y = matmul_nt(x, w);
  if (!bias.empty()) {
    const std::size_t rows = y.dim(0), out = y.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out; ++o) y[r * out + o] += bias[o];
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias) {
  require_rank(input.shape(), 3, "conv2d_valid input");
  require_rank(kernels.shape(), 4, "conv2d_valid kernels");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t O = kernels.dim(0), KC = kernels.dim(1), Kh = kernels.dim(2), Kw = kernels.dim(3);
  if (KC != C || Kh > H || Kw > W || Kh == 0 || Kw == 0) {
    throw DimensionError("conv2d_valid: kernels " + shape_str(kernels.shape()) +
                         " incompatible with input " + shape_str(input.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != O) {
    throw DimensionError("conv2d_valid: bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(O) + " output channels");
  }
  const std::size_t Ho = H - Kh + 1, Wo = W - Kw + 1;
  Tensor<T> out(Shape{O, Ho, Wo});
  for (std::size_t o = 0; o < O; ++o) {
    T* oplane = out.data() + o * Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
      const T* iplane = input.data() + c * H * W;
      const T* kk = kernels.data() + ((o * C + c) * Kh) * Kw;
      for (std::size_t ky = 0; ky < Kh; ++ky) {
        for (std::size_t kx = 0; kx < Kw; ++kx) {
          const T kv = kk[ky * Kw + kx];
          for (std::size_t y = 0; y < Ho; ++y) {
            const T* irow = iplane + (y + ky) * W + kx;
            T* orow = oplane + y * Wo;
            for (std::size_t x = 0; x < Wo; ++x) orow[x] += irow[x] * kv;
          }
        }
      }
    }
    const T b = bias[o];
    for (std::size_t i = 0; i < Ho * Wo; ++i) oplane[i] += b;
  }
  return out;
}

template <typename T>
void conv2d_valid_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& grad_out,
                           Tensor<T>* grad_input, Tensor<T>* grad_kernels, Tensor<T>* grad_bias) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t O = kernels.dim(0), Kh = kernels.dim(2), Kw = kernels.dim(3);
  const std::size_t Ho = H - Kh + 1, Wo = W - Kw + 1;
  require_same_shape(grad_out.shape(), Shape{O, Ho, Wo}, "conv2d_valid_backward");
  std::vector<T> lanes(Wo);
  for (std::size_t o = 0; o < O; ++o) {
    const T* gplane = grad_out.data() + o * Ho * Wo;
    if (grad_bias) {
      T acc = 0;
      for (std::size_t i = 0; i < Ho * Wo; ++i) acc += gplane[i];
      (*grad_bias)[o] += acc;
    }
    for (std::size_t c = 0; c < C; ++c) {
      const T* iplane = input.data() + c * H * W;
      const T* kk = kernels.data() + ((o * C + c) * Kh) * Kw;
      for (std::size_t ky = 0; ky < Kh; ++ky) {
        for (std::size_t kx = 0; kx < Kw; ++kx) {
          if (grad_kernels) {
            // Per-column partial sums keep the inner loop vectorizable while
            // the final reduction order stays fixed.
            std::fill(lanes.begin(), lanes.end(), T(0));
            for (std::size_t y = 0; y < Ho; ++y) {
              const T* irow = iplane + (y + ky) * W + kx;
              const T* grow = gplane + y * Wo;
              for (std::size_t x = 0; x < Wo; ++x) lanes[x] += grow[x] * irow[x];
            }
            T acc = 0;
            for (std::size_t x = 0; x < Wo; ++x) acc += lanes[x];
            (*grad_kernels)[((o * C + c) * Kh + ky) * Kw + kx] += acc;
          }
          if (grad_input) {
            const T kv = kk[ky * Kw + kx];
            T* gin = grad_input->data() + c * H * W;
            for (std::size_t y = 0; y < Ho; ++y) {
              T* girow = gin + (y + ky) * W + kx;
              const T* grow = gplane + y * Wo;
              for (std::size_t x = 0; x < Wo; ++x) girow[x] += grow[x] * kv;
            }
          }
        }
      }
    }
  }
}

DecisionRecorder::DecisionRecorder() : previous_(g_recorder.exchange(this)) {}

DecisionRecorder::~DecisionRecorder() { g_recorder.store(previous_); }

void DecisionRecorder::record(std::uint64_t call_hash) {
  if (DecisionRecorder* r = g_recorder.load()) r->digest_.fetch_add(call_hash);
}

bool DecisionRecorder::active() { return g_recorder.load() != nullptr; }

template <typename T>
PoolResult<T> maxpool2(const Tensor<T>& input) {
  require_rank(input.shape(), 3, "maxpool2 input");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  if (H % 2 != 0 || W % 2 != 0 || H == 0 || W == 0) {
    throw DimensionError("maxpool2: extents must be even, got " + shape_str(input.shape()));
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  PoolResult<T> r{Tensor<T>(Shape{C, Ho, Wo}), std::vector<std::uint32_t>(C * Ho * Wo)};
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t x = 0; x < Wo; ++x) {
        const std::size_t base = (c * H + 2 * y) * W + 2 * x;
        const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
        std::size_t best = cand[0];
        for (int i = 1; i < 4; ++i) {
          if (input[cand[i]] > input[best]) best = cand[i];
        }
        const std::size_t oi = (c * Ho + y) * Wo + x;
        r.out[oi] = input[best];
        r.argmax[oi] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (DecisionRecorder::active()) {
    DecisionHash h(0x6d61787030ULL ^ input.size());
    for (std::uint32_t a : r.argmax) h.value(a);
    DecisionRecorder::record(h.finish());
  }
  return r;
}

template <typename T>
void maxpool2_backward(const std::vector<std::uint32_t>& argmax, const Tensor<T>& grad_out, Tensor<T>& grad_input) {
  for (std::size_t i = 0; i < argmax.size(); ++i) grad_input[argmax[i]] += grad_out[i];
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
  if (DecisionRecorder::active()) {
    DecisionHash h(0x72656c7530ULL ^ x.size());
    for (const T& v : x.vec()) h.bit(v > T(0));
    DecisionRecorder::record(h.finish());
  }
  return y;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.empty()) throw DimensionError("softmax: empty input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * n;
    T* out = y.data() + r * n;
    T mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    T sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = std::exp(in[i] - mx);
      sum += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] = out[i] / sum;
  }
  return y;
}

template <typename T>
LayerNormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, double eps) {
  const std::size_t n = x.shape().back();
  if (n < 2) throw DimensionError("layer_norm: need at least 2 features, got " + shape_str(x.shape()));
  if (gain.size() != n || shift.size() != n) {
    throw DimensionError("layer_norm: gain/shift " + shape_str(gain.shape()) + " do not match width " +
                         std::to_string(n));
  }
  const std::size_t rows = x.size() / n;
  LayerNormResult<T> r{Tensor<T>(x.shape()), Tensor<T>(x.shape()), std::vector<T>(rows)};
  for (std::size_t row = 0; row < rows; ++row) {
    const T* in = x.data() + row * n;
    T mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += in[i];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<T>(n);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
    r.rstd[row] = rstd;
    for (std::size_t i = 0; i < n; ++i) {
      const T xh = (in[i] - mean) * rstd;
      r.normalized[row * n + i] = xh;
      r.out[row * n + i] = xh * gain[i] + shift[i];
    }
  }
  return r;
}

#define HINDSIGHT_INSTANTIATE_KERNELS(T)                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> conv2d_valid(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template void conv2d_valid_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, \
                                      Tensor<T>*, Tensor<T>*);                                         \
  template PoolResult<T> maxpool2(const Tensor<T>&);                                                   \
  template void maxpool2_backward(const std::vector<std::uint32_t>&, const Tensor<T>&, Tensor<T>&);    \
  template Tensor<T> relu(const Tensor<T>&);                                                           \
  template Tensor<T> softmax(const Tensor<T>&);                                                        \
  template LayerNormResult<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);

HINDSIGHT_INSTANTIATE_KERNELS(float)
HINDSIGHT_INSTANTIATE_KERNELS(double)

#undef HINDSIGHT_INSTANTIATE_KERNELS

}  // namespace hindsight::kernels
