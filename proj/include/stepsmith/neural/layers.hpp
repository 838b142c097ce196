#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "stepsmith/error.hpp"
#include "stepsmith/neural/ops.hpp"
#include "stepsmith/random.hpp"

namespace stepsmith::nn {

// Named trainable tensors in registration order.
template <class T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    for (const auto& [existing, _] : params_) {
      if (existing == name) throw DataError(fmt::format("duplicate parameter name '{}'", name));
    }
    auto p = parameter<T>(std::move(init));
    params_.emplace_back(name, p);
    return p;
  }

  const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p->ensure_grad().fill(T{0});
  }

  // Copies of all values keyed by name.
  std::map<std::string, Tensor<T>> snapshot() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, p] : params_) out.emplace(name, p->value);
    return out;
  }

  // Overwrites every parameter from `values`; each must be present with its exact shape.
  void restore(const std::map<std::string, Tensor<T>>& values) {
    for (auto& [name, p] : params_) {
      const auto it = values.find(name);
      if (it == values.end()) throw DataError(fmt::format("missing parameter '{}'", name));
      if (it->second.shape() != p->shape()) {
        throw DataError(fmt::format("parameter '{}' has shape {}, expected {}", name,
                                    shape_string(it->second.shape()), shape_string(p->shape())));
      }
      p->value = it->second;
    }
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
};

template <class T>
Tensor<T> glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

enum class Init { Glorot, Zero };

template <class T>
struct Dense {
  Var<T> w;
  Var<T> b;

  Dense() = default;
  Dense(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
        Rng& rng, Init init = Init::Glorot) {
    Tensor<T> wt = init == Init::Glorot ? glorot_uniform<T>({in, out}, in, out, rng)
                                        : Tensor<T>({in, out}, T{0});
    w = params.add(name + ".w", std::move(wt));
    b = params.add(name + ".b", Tensor<T>({out}, T{0}));
  }

  std::size_t in_features() const { return w->value.dim(0); }
  std::size_t out_features() const { return w->value.dim(1); }

  Var<T> operator()(const Var<T>& x) const { return dense(x, w, b); }
};

namespace detail {
// Gate bias layout (i, f, g, o) with the forget block at 1.
template <class T>
Tensor<T> lstm_bias(std::size_t units) {
  Tensor<T> b({4 * units}, T{0});
  for (std::size_t j = units; j < 2 * units; ++j) b[j] = T{1};
  return b;
}

// c' = f*c + i*g, h' = o*tanh(c') from preactivations z laid out (..., 4*units).
template <class T>
std::pair<Var<T>, Var<T>> lstm_update(const Var<T>& z, const Var<T>& c, std::size_t units) {
  auto i = sigmoid(slice(z, 0, units));
  auto f = sigmoid(slice(z, units, units));
  auto g = tanh(slice(z, 2 * units, units));
  auto o = sigmoid(slice(z, 3 * units, units));
  auto c_next = add(mul(f, c), mul(i, g));
  auto h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}
}  // namespace detail

template <class T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

// Gate order (input, forget, cell, output); forget bias starts at 1.
template <class T>
struct LstmLayer {
  Var<T> w;  // (input, 4*units)
  Var<T> u;  // (units, 4*units)
  Var<T> b;  // (4*units)
  std::size_t units = 0;

  LstmLayer() = default;
  LstmLayer(ParameterSet<T>& params, const std::string& name, std::size_t input,
            std::size_t units_, Rng& rng)
      : units(units_) {
    w = params.add(name + ".w", glorot_uniform<T>({input, 4 * units}, input, 4 * units, rng));
    u = params.add(name + ".u", glorot_uniform<T>({units, 4 * units}, units, 4 * units, rng));
    b = params.add(name + ".b", detail::lstm_bias<T>(units));
  }

  std::size_t input_size() const { return w->value.dim(0); }

  LstmState<T> initial_state() const {
    return {constant<T>(Tensor<T>({units}, T{0})), constant<T>(Tensor<T>({units}, T{0}))};
  }

  LstmState<T> step(const Var<T>& x, const LstmState<T>& s) const {
    detail::require_shape(x->size() == input_size(), "lstm",
                          fmt::format("input {} vs {} expected", x->size(), input_size()));
    auto xv = x->value.rank() == 1 ? x : reshape(x, {input_size()});
    auto z = add(dense(xv, w, b), dense(s.h, u));
    auto [h, c] = detail::lstm_update(z, s.c, units);
    return {h, c};
  }

  std::vector<Var<T>> forward(const std::vector<Var<T>>& xs) const {
    std::vector<Var<T>> hs;
    hs.reserve(xs.size());
    LstmState<T> s = initial_state();
    for (const auto& x : xs) {
      s = step(x, s);
      hs.push_back(s.h);
    }
    return hs;
  }
};

// ConvLSTM over (H, F, C) inputs: all four gates come from one 3x3 same-padded
// convolution of [x_t, h_{t-1}] with 4*units output channels.
template <class T>
struct ConvLstmLayer {
  Var<T> kernel;  // (k, k, in + units, 4*units)
  Var<T> b;       // (4*units)
  std::size_t units = 0;
  std::size_t in_channels = 0;

  ConvLstmLayer() = default;
  ConvLstmLayer(ParameterSet<T>& params, const std::string& name, std::size_t in,
                std::size_t units_, Rng& rng, std::size_t ksize = 3)
      : units(units_), in_channels(in) {
    const std::size_t cin = in + units;
    kernel = params.add(name + ".kernel",
                        glorot_uniform<T>({ksize, ksize, cin, 4 * units}, ksize * ksize * cin,
                                          ksize * ksize * 4 * units, rng));
    b = params.add(name + ".b", detail::lstm_bias<T>(units));
  }

  LstmState<T> initial_state(std::size_t h, std::size_t f) const {
    return {constant<T>(Tensor<T>({h, f, units}, T{0})),
            constant<T>(Tensor<T>({h, f, units}, T{0}))};
  }

  LstmState<T> step(const Var<T>& x, const LstmState<T>& s) const {
    detail::require_shape(x->value.rank() == 3 && x->value.dim(2) == in_channels, "convlstm",
                          fmt::format("input {} vs {} channels", shape_string(x->shape()),
                                      in_channels));
    auto z = conv2d_same(concat<T>({x, s.h}), kernel, b);
    auto [h, c] = detail::lstm_update(z, s.c, units);
    return {h, c};
  }

  std::vector<Var<T>> forward(const std::vector<Var<T>>& xs) const {
    std::vector<Var<T>> hs;
    if (xs.empty()) return hs;
    LstmState<T> s = initial_state(xs.front()->value.dim(0), xs.front()->value.dim(1));
    for (const auto& x : xs) {
      s = step(x, s);
      hs.push_back(s.h);
    }
    return hs;
  }
};

}  // namespace stepsmith::nn
