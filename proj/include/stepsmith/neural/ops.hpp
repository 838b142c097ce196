#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "stepsmith/error.hpp"
#include "stepsmith/neural/autograd.hpp"
#include "stepsmith/random.hpp"

namespace stepsmith::nn {

inline constexpr double kLeakySlope = 0.3;
inline constexpr double kBceClamp = 1e-7;

namespace detail {

inline void require_shape(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw DataError(fmt::format("{}: shape mismatch, {}", op, detail));
}

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <class T, class F, class G>
Var<T> unary(const Var<T>& x, F forward, G derivative) {
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(x->value[i]);
  return make_node<T>(std::move(out), {x}, [derivative](Node<T>& self) {
    Tensor<T>& gx = self.parent_grad(0);
    const Tensor<T>& in = self.parents[0]->value;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * derivative(in[i], self.value[i]);
    }
  });
}

}  // namespace detail

// y = x W (+ b). x holds rows of length in = W.dim(0); W is (in, out). Zero entries of
// x are skipped, which keeps one-hot inputs cheap.
template <class T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b = nullptr) {
  detail::require_shape(w->value.rank() == 2, "dense", "weights must be rank 2");
  const std::size_t in = w->value.dim(0);
  const std::size_t out = w->value.dim(1);
  detail::require_shape(in > 0 && x->size() % in == 0, "dense",
                        fmt::format("input {} vs weights {}", shape_string(x->shape()),
                                    shape_string(w->shape())));
  if (b) {
    detail::require_shape(b->size() == out, "dense",
                          fmt::format("bias {} vs {} outputs", shape_string(b->shape()), out));
  }
  const std::size_t rows = x->size() / in;
  Shape shape = x->value.rank() <= 1 ? Shape{out} : Shape{rows, out};
  Tensor<T> y(shape, T{0});
  const T* xv = x->value.data();
  const T* wv = w->value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y.data() + r * out;
    if (b) std::copy(b->value.data(), b->value.data() + out, yr);
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = xv[r * in + i];
      if (xi == T{0}) continue;
      const T* wr = wv + i * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xi * wr[j];
    }
  }
  std::vector<Var<T>> parents{x, w};
  if (b) parents.push_back(b);
  return make_node<T>(std::move(y), std::move(parents), [rows, in, out](Node<T>& self) {
    const T* g = self.grad.data();
    const T* xv = self.parents[0]->value.data();
    const T* wv = self.parents[1]->value.data();
    if (self.parent_requires_grad(1)) {
      T* gw = self.parent_grad(1).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < in; ++i) {
          const T xi = xv[r * in + i];
          if (xi == T{0}) continue;
          T* gwr = gw + i * out;
          const T* gr = g + r * out;
          for (std::size_t j = 0; j < out; ++j) gwr[j] += xi * gr[j];
        }
      }
    }
    if (self.parent_requires_grad(0)) {
      T* gx = self.parent_grad(0).data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g + r * out;
        for (std::size_t i = 0; i < in; ++i) {
          const T* wr = wv + i * out;
          T acc{0};
          for (std::size_t j = 0; j < out; ++j) acc += wr[j] * gr[j];
          gx[r * in + i] += acc;
        }
      }
    }
    if (self.parents.size() > 2 && self.parent_requires_grad(2)) {
      T* gb = self.parent_grad(2).data();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < out; ++j) gb[j] += g[r * out + j];
      }
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_shape(a->shape() == b->shape(), "add",
                        shape_string(a->shape()) + " vs " + shape_string(b->shape()));
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!self.parent_requires_grad(p)) continue;
      Tensor<T>& g = self.parent_grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_shape(a->shape() == b->shape(), "mul",
                        shape_string(a->shape()) + " vs " + shape_string(b->shape()));
  Tensor<T> out(a->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_node<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const Tensor<T>& av = self.parents[0]->value;
    const Tensor<T>& bv = self.parents[1]->value;
    if (self.parent_requires_grad(0)) {
      Tensor<T>& g = self.parent_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.parent_requires_grad(1)) {
      Tensor<T>& g = self.parent_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  return detail::unary<T>(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return T{1} / (T{1} + std::exp(-v)); }, [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope = static_cast<T>(kLeakySlope)) {
  return detail::unary<T>(
      x, [slope](T v) { return v > T{0} ? v : slope * v; },
      [slope](T v, T) { return v > T{0} ? T{1} : slope; });
}

// Inverted dropout: kept units are scaled by 1/(1-rate). Identity outside training.
template <class T>
Var<T> dropout(const Var<T>& x, double rate, bool training, Rng& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw DataError("dropout rate must be below 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x->size());
  for (T& m : mask) m = rng.uniform() >= rate ? keep_scale : T{0};
  Tensor<T> out(x->shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x->value[i] * mask[i];
  return make_node<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& self) {
    Tensor<T>& g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// Softmax over the whole (flattened) tensor.
template <class T>
Var<T> softmax(const Var<T>& x) {
  const T top = *std::max_element(x->value.storage().begin(), x->value.storage().end());
  Tensor<T> out(x->shape());
  T total{0};
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(x->value[i] - top);
    total += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
  return make_node<T>(std::move(out), {x}, [](Node<T>& self) {
    T dot{0};
    for (std::size_t i = 0; i < self.size(); ++i) dot += self.grad[i] * self.value[i];
    Tensor<T>& g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.value[i] * (self.grad[i] - dot);
  });
}

// -log softmax(logits)[target], computed from logits for stability. Returns shape (1).
template <class T>
Var<T> softmax_ce_loss(const Var<T>& logits, std::size_t target) {
  if (target >= logits->size()) {
    throw DataError(fmt::format("cross-entropy target {} outside {} classes", target, logits->size()));
  }
  const T top = *std::max_element(logits->value.storage().begin(), logits->value.storage().end());
  T total{0};
  for (std::size_t i = 0; i < logits->size(); ++i) total += std::exp(logits->value[i] - top);
  const T log_z = top + std::log(total);
  Tensor<T> out(Shape{1}, log_z - logits->value[target]);
  return make_node<T>(std::move(out), {logits}, [target, log_z](Node<T>& self) {
    Tensor<T>& g = self.parent_grad(0);
    const Tensor<T>& z = self.parents[0]->value;
    const T scale_g = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T p = std::exp(z[i] - log_z);
      g[i] += scale_g * (p - (i == target ? T{1} : T{0}));
    }
  });
}

// Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7] and clamped
// entries pass no gradient.
template <class T>
Var<T> bce_loss(const Var<T>& pred, const Tensor<T>& target) {
  detail::require_shape(pred->size() == target.size(), "bce_loss",
                        shape_string(pred->shape()) + " vs " + shape_string(target.shape()));
  const T lo = static_cast<T>(kBceClamp);
  const T hi = T{1} - lo;
  T total{0};
  for (std::size_t i = 0; i < target.size(); ++i) {
    const T t = target[i];
    if (t != T{0} && t != T{1}) throw DataError("bce_loss targets must be 0 or 1");
    const T p = std::clamp(pred->value[i], lo, hi);
    total -= t * std::log(p) + (T{1} - t) * std::log(T{1} - p);
  }
  const auto n = static_cast<T>(target.size());
  Tensor<T> out(Shape{1}, total / n);
  return make_node<T>(std::move(out), {pred}, [target, lo, hi, n](Node<T>& self) {
    Tensor<T>& g = self.parent_grad(0);
    const Tensor<T>& pv = self.parents[0]->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T p = pv[i];
      if (p < lo || p > hi) continue;
      const T t = target[i];
      g[i] += self.grad[0] * (-(t / p) + (T{1} - t) / (T{1} - p)) / n;
    }
  });
}

template <class T>
Var<T> sum(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw DataError("sum of an empty list");
  Tensor<T> out(xs.front()->shape(), T{0});
  for (const auto& x : xs) {
    detail::require_shape(x->shape() == out.shape(), "sum",
                          shape_string(x->shape()) + " vs " + shape_string(out.shape()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x->value[i];
  }
  return make_node<T>(std::move(out), xs, [](Node<T>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (!self.parent_requires_grad(p)) continue;
      Tensor<T>& g = self.parent_grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// Sum of all entries, shape (1).
template <class T>
Var<T> reduce_sum(const Var<T>& x) {
  T total{0};
  for (T v : x->value.storage()) total += v;
  return make_node<T>(Tensor<T>(Shape{1}, total), {x}, [](Node<T>& self) {
    Tensor<T>& g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  return make_node<T>(x->value.reshaped(std::move(shape)), {x}, [](Node<T>& self) {
    Tensor<T>& g = self.parent_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// Concatenation along the last axis; leading dimensions must agree. Rank-1 inputs
// concatenate end to end.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw DataError("concat of an empty list");
  Shape lead = xs.front()->shape();
  if (lead.empty()) lead = {1};
  lead.pop_back();
  const std::size_t outer = shape_size(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& x : xs) {
    Shape s = x->shape();
    if (s.empty()) s = {1};
    const std::size_t w = s.back();
    s.pop_back();
    detail::require_shape(s == lead, "concat",
                          shape_string(x->shape()) + " vs " + shape_string(xs.front()->shape()));
    widths.push_back(w);
    total += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  Tensor<T> out(shape);
  std::size_t col = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const T* src = xs[k]->value.data();
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy(src + r * widths[k], src + (r + 1) * widths[k], out.data() + r * total + col);
    }
    col += widths[k];
  }
  return make_node<T>(std::move(out), xs, [widths, outer, total](Node<T>& self) {
    std::size_t col = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t w = widths[k];
      if (self.parent_requires_grad(k)) {
        T* g = self.parent_grad(k).data();
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * total + col + j];
        }
      }
      col += w;
    }
  });
}

// x[..., begin:begin+width] along the last axis.
template <class T>
Var<T> slice(const Var<T>& x, std::size_t begin, std::size_t width) {
  Shape shape = x->shape();
  detail::require_shape(!shape.empty() && begin + width <= shape.back(), "slice",
                        fmt::format("[{}, {}) of {}", begin, begin + width, shape_string(shape)));
  const std::size_t full = shape.back();
  const std::size_t outer = x->size() / full;
  shape.back() = width;
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < outer; ++r) {
    const T* src = x->value.data() + r * full + begin;
    std::copy(src, src + width, out.data() + r * width);
  }
  return make_node<T>(std::move(out), {x}, [begin, width, full, outer](Node<T>& self) {
    T* g = self.parent_grad(0).data();
    for (std::size_t r = 0; r < outer; ++r) {
      for (std::size_t j = 0; j < width; ++j) g[r * full + begin + j] += self.grad[r * width + j];
    }
  });
}

// Same-padded stride-1 2D convolution. x is (H, W, Cin); kernel is (k, k, Cin, Cout)
// with odd k; bias is (Cout). Implemented as im2col followed by one GEMM.
template <class T>
Var<T> conv2d_same(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias) {
  const Shape& xs = x->shape();
  const Shape& ks = kernel->shape();
  detail::require_shape(xs.size() == 3 && ks.size() == 4 && ks[0] == ks[1] && ks[0] % 2 == 1 &&
                            ks[2] == xs[2] && bias->size() == ks[3],
                        "conv2d_same",
                        fmt::format("input {} kernel {} bias {}", shape_string(xs),
                                    shape_string(ks), shape_string(bias->shape())));
  const std::size_t h = xs[0], w = xs[1], cin = xs[2];
  const std::size_t k = ks[0], cout = ks[3];
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t patch = k * k * cin;
  std::vector<T> col(h * w * patch, T{0});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      T* row = col.data() + (i * w + j) * patch;
      for (std::size_t di = 0; di < k; ++di) {
        const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) - pad;
        if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t dj = 0; dj < k; ++dj) {
          const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) - pad;
          if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
          const T* src = x->value.data() + (static_cast<std::size_t>(si) * w +
                                            static_cast<std::size_t>(sj)) * cin;
          std::copy(src, src + cin, row + (di * k + dj) * cin);
        }
      }
    }
  }
  Tensor<T> out(Shape{h, w, cout});
  {
    detail::ConstMatrixMap<T> cm(col.data(), static_cast<Eigen::Index>(h * w),
                                 static_cast<Eigen::Index>(patch));
    detail::ConstMatrixMap<T> km(kernel->value.data(), static_cast<Eigen::Index>(patch),
                                 static_cast<Eigen::Index>(cout));
    detail::MatrixMap<T> om(out.data(), static_cast<Eigen::Index>(h * w),
                            static_cast<Eigen::Index>(cout));
    om.noalias() = cm * km;
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t c = 0; c < cout; ++c) out[p * cout + c] += bias->value[c];
    }
  }
  return make_node<T>(
      std::move(out), {x, kernel, bias},
      [col = std::move(col), h, w, cin, k, cout, pad, patch](Node<T>& self) {
        const auto rows = static_cast<Eigen::Index>(h * w);
        detail::ConstMatrixMap<T> gm(self.grad.data(), rows, static_cast<Eigen::Index>(cout));
        if (self.parent_requires_grad(1)) {
          detail::ConstMatrixMap<T> cm(col.data(), rows, static_cast<Eigen::Index>(patch));
          detail::MatrixMap<T> gk(self.parent_grad(1).data(), static_cast<Eigen::Index>(patch),
                                  static_cast<Eigen::Index>(cout));
          gk.noalias() += cm.transpose() * gm;
        }
        if (self.parent_requires_grad(2)) {
          T* gb = self.parent_grad(2).data();
          for (std::size_t p = 0; p < h * w; ++p) {
            for (std::size_t c = 0; c < cout; ++c) gb[c] += self.grad[p * cout + c];
          }
        }
        if (self.parent_requires_grad(0)) {
          detail::ConstMatrixMap<T> km(self.parents[1]->value.data(),
                                       static_cast<Eigen::Index>(patch),
                                       static_cast<Eigen::Index>(cout));
          detail::RowMatrix<T> gcol = gm * km.transpose();
          T* gx = self.parent_grad(0).data();
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const T* row = gcol.data() + (i * w + j) * patch;
              for (std::size_t di = 0; di < k; ++di) {
                const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) - pad;
                if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < k; ++dj) {
                  const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) - pad;
                  if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                  T* dst = gx + (static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)) * cin;
                  const T* src = row + (di * k + dj) * cin;
                  for (std::size_t c = 0; c < cin; ++c) dst[c] += src[c];
                }
              }
            }
          }
        }
      });
}

// Max pooling along axis 1 of an (H, F, C) tensor: F -> (F - width) / stride + 1.
// Ties go to the lowest frequency index.
template <class T>
Var<T> maxpool_freq(const Var<T>& x, std::size_t width = 3, std::size_t stride = 3) {
  const Shape& xs = x->shape();
  detail::require_shape(xs.size() == 3 && width > 0 && stride > 0 && xs[1] >= width,
                        "maxpool_freq",
                        fmt::format("input {} with width {}", shape_string(xs), width));
  const std::size_t h = xs[0], f = xs[1], c = xs[2];
  const std::size_t fo = (f - width) / stride + 1;
  Tensor<T> out(Shape{h, fo, c});
  std::vector<std::size_t> arg(out.size());
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t o = 0; o < fo; ++o) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (i * f + o * stride) * c + ch;
        for (std::size_t k = 1; k < width; ++k) {
          const std::size_t idx = (i * f + o * stride + k) * c + ch;
          if (x->value[idx] > x->value[best]) best = idx;
        }
        const std::size_t oi = (i * fo + o) * c + ch;
        out[oi] = x->value[best];
        arg[oi] = best;
      }
    }
  }
  return make_node<T>(std::move(out), {x}, [arg = std::move(arg)](Node<T>& self) {
    Tensor<T>& g = self.parent_grad(0);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

}  // namespace stepsmith::nn
