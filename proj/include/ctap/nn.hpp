#pragma once

// Small f64 network engine for the three fixed CTAP architectures:
// temporal convolution (stride 1, same padding), dense layers, ReLU/sigmoid,
// cross-entropy and L1 losses. Backward passes are written by hand.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ctap/error.hpp"
#include "ctap/rng.hpp"

namespace ctap::nn {

/// Probabilities are kept inside [kProbEps, 1 - kProbEps].
inline constexpr double kProbEps = 1e-7;

/// Row-major dense matrix; rows index time (or batch), columns channels.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Named-parameter storage: a shape plus flat row-major values.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  static Tensor zeros(std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return Tensor{std::move(shape), std::vector<double>(n, 0.0)};
  }

  std::size_t size() const noexcept { return values.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline double sigmoid(double z) {
  const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::clamp(p, kProbEps, 1.0 - kProbEps);
}

/// Glorot-uniform fill in [-sqrt(6/(fan_in+fan_out)), +sqrt(...)].
inline void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values) v = rng.uniform(-limit, limit);
}

// ---------------------------------------------------------------------------
// Layers

/// 1-D convolution over time. Weight shape d_in x d_out x k; k odd.
struct TemporalConv {
  Tensor weight;
  Tensor bias;

  static TemporalConv zeros(std::size_t d_in, std::size_t d_out, std::size_t k) {
    if (k % 2 == 0 || k == 0) throw Error(ErrorKind::InvalidArgument, "kernel size must be odd");
    return {Tensor::zeros({d_in, d_out, k}), Tensor::zeros({d_out})};
  }

  static TemporalConv glorot(std::size_t d_in, std::size_t d_out, std::size_t k, Rng& rng) {
    auto layer = zeros(d_in, d_out, k);
    glorot_uniform(layer.weight, d_in * k, d_out * k, rng);
    return layer;
  }

  std::size_t d_in() const { return weight.shape.at(0); }
  std::size_t d_out() const { return weight.shape.at(1); }
  std::size_t k() const { return weight.shape.at(2); }

  double w(std::size_t i, std::size_t o, std::size_t j) const {
    return weight.values[(i * d_out() + o) * k() + j];
  }
};

inline Matrix forward(const TemporalConv& layer, const Matrix& x) {
  if (x.cols() != layer.d_in()) {
    throw Error(ErrorKind::InvalidArgument,
                "temporal conv expects " + std::to_string(layer.d_in()) + " input channels, got " +
                    std::to_string(x.cols()));
  }
  const std::size_t T = x.rows();
  const std::size_t d_out = layer.d_out();
  const std::size_t k = layer.k();
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  Matrix out(T, d_out);
  for (std::size_t t = 0; t < T; ++t) {
    auto out_row = out.row(t);
    for (std::size_t o = 0; o < d_out; ++o) out_row[o] = layer.bias.values[o];
    for (std::size_t j = 0; j < k; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const auto in_row = x.row(static_cast<std::size_t>(src));
      for (std::size_t i = 0; i < layer.d_in(); ++i) {
        const double xi = in_row[i];
        if (xi == 0.0) continue;
        const double* wp = layer.weight.values.data() + i * d_out * k + j;
        for (std::size_t o = 0; o < d_out; ++o) out_row[o] += xi * wp[o * k];
      }
    }
  }
  return out;
}

/// Accumulates parameter gradients into `grad`; writes dL/dx to grad_input if given.
inline void backward(const TemporalConv& layer, const Matrix& x, const Matrix& grad_out,
                     TemporalConv& grad, Matrix* grad_input) {
  const std::size_t T = x.rows();
  const std::size_t d_in = layer.d_in();
  const std::size_t d_out = layer.d_out();
  const std::size_t k = layer.k();
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  if (grad_input) *grad_input = Matrix(T, d_in);
  for (std::size_t t = 0; t < T; ++t) {
    const auto g = grad_out.row(t);
    for (std::size_t o = 0; o < d_out; ++o) grad.bias.values[o] += g[o];
    for (std::size_t j = 0; j < k; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const auto s = static_cast<std::size_t>(src);
      const auto in_row = x.row(s);
      for (std::size_t i = 0; i < d_in; ++i) {
        double* gw = grad.weight.values.data() + i * d_out * k + j;
        const double* wp = layer.weight.values.data() + i * d_out * k + j;
        const double xi = in_row[i];
        double acc = 0.0;
        for (std::size_t o = 0; o < d_out; ++o) {
          gw[o * k] += xi * g[o];
          acc += wp[o * k] * g[o];
        }
        if (grad_input) (*grad_input)(s, i) += acc;
      }
    }
  }
}

/// y = x W + b with W of shape d_in x d_out.
struct Dense {
  Tensor weight;
  Tensor bias;

  static Dense zeros(std::size_t d_in, std::size_t d_out) {
    return {Tensor::zeros({d_in, d_out}), Tensor::zeros({d_out})};
  }

  static Dense glorot(std::size_t d_in, std::size_t d_out, Rng& rng) {
    auto layer = zeros(d_in, d_out);
    glorot_uniform(layer.weight, d_in, d_out, rng);
    return layer;
  }

  std::size_t d_in() const { return weight.shape.at(0); }
  std::size_t d_out() const { return weight.shape.at(1); }
};

inline std::vector<double> forward(const Dense& layer, std::span<const double> x) {
  if (x.size() != layer.d_in()) {
    throw Error(ErrorKind::InvalidArgument,
                "dense layer expects " + std::to_string(layer.d_in()) + " inputs, got " +
                    std::to_string(x.size()));
  }
  std::vector<double> y(layer.bias.values);
  const std::size_t d_out = layer.d_out();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double* wp = layer.weight.values.data() + i * d_out;
    for (std::size_t o = 0; o < d_out; ++o) y[o] += xi * wp[o];
  }
  return y;
}

inline void backward(const Dense& layer, std::span<const double> x, std::span<const double> grad_out,
                     Dense& grad, std::vector<double>* grad_input) {
  const std::size_t d_out = layer.d_out();
  if (grad_input) grad_input->assign(x.size(), 0.0);
  for (std::size_t o = 0; o < d_out; ++o) grad.bias.values[o] += grad_out[o];
  for (std::size_t i = 0; i < x.size(); ++i) {
    double* gw = grad.weight.values.data() + i * d_out;
    const double* wp = layer.weight.values.data() + i * d_out;
    double acc = 0.0;
    for (std::size_t o = 0; o < d_out; ++o) {
      gw[o] += x[i] * grad_out[o];
      acc += wp[o] * grad_out[o];
    }
    if (grad_input) (*grad_input)[i] = acc;
  }
}

// ---------------------------------------------------------------------------
// Two-layer temporal conv stack: conv -> ReLU -> conv -> optional sigmoid.

enum class Head { Sigmoid, Linear };

struct TConvStack {
  TemporalConv first;
  TemporalConv second;

  static TConvStack zeros(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, std::size_t k) {
    return {TemporalConv::zeros(d_in, d_hidden, k), TemporalConv::zeros(d_hidden, d_out, k)};
  }

  static TConvStack glorot(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                           std::size_t k, Rng& rng) {
    auto first = TemporalConv::glorot(d_in, d_hidden, k, rng);
    auto second = TemporalConv::glorot(d_hidden, d_out, k, rng);
    return {std::move(first), std::move(second)};
  }

  TConvStack zeros_like() const {
    return zeros(first.d_in(), first.d_out(), second.d_out(), first.k());
  }
};

/// Calls fn(name, tensor) for each parameter; works on const and mutable stacks.
template <typename Stack, typename Fn>
  requires std::same_as<std::remove_const_t<Stack>, TConvStack>
void visit_params(Stack& net, const std::string& prefix, Fn&& fn) {
  fn(prefix + "conv1.weight", net.first.weight);
  fn(prefix + "conv1.bias", net.first.bias);
  fn(prefix + "conv2.weight", net.second.weight);
  fn(prefix + "conv2.bias", net.second.bias);
}

template <typename Layer, typename Fn>
  requires std::same_as<std::remove_const_t<Layer>, Dense>
void visit_params(Layer& layer, const std::string& prefix, Fn&& fn) {
  fn(prefix + "weight", layer.weight);
  fn(prefix + "bias", layer.bias);
}

/// Intermediates recorded by a forward pass for the matching backward.
struct TConvTape {
  bool recorded = false;
  Head head = Head::Linear;
  Matrix input;
  Matrix hidden_pre;
  Matrix hidden;
  Matrix output;
};

inline Matrix forward(const TConvStack& net, const Matrix& x, Head head, TConvTape* tape = nullptr) {
  if (x.rows() == 0) throw Error(ErrorKind::InvalidArgument, "temporal conv needs T >= 1");
  Matrix hidden_pre = forward(net.first, x);
  Matrix hidden = hidden_pre;
  for (auto& v : hidden.values()) v = std::max(v, 0.0);
  Matrix out = forward(net.second, hidden);
  if (head == Head::Sigmoid) {
    for (auto& v : out.values()) v = sigmoid(v);
  }
  if (tape) {
    tape->recorded = true;
    tape->head = head;
    tape->input = x;
    tape->hidden_pre = std::move(hidden_pre);
    tape->hidden = std::move(hidden);
    tape->output = out;
  }
  return out;
}

/// grad_output is dL/d(stack output), post-head. Parameter gradients are
/// accumulated into `grads`.
inline void backward(const TConvStack& net, const TConvTape& tape, const Matrix& grad_output,
                     TConvStack& grads, Matrix* grad_input = nullptr) {
  if (!tape.recorded) throw Error(ErrorKind::InvalidArgument, "backward called without forward");
  if (grad_output.rows() != tape.output.rows() || grad_output.cols() != tape.output.cols()) {
    throw Error(ErrorKind::InvalidArgument, "gradient shape does not match forward output");
  }
  Matrix grad_pre = grad_output;
  if (tape.head == Head::Sigmoid) {
    auto p = tape.output.values();
    auto g = grad_pre.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= p[i] * (1.0 - p[i]);
  }
  Matrix grad_hidden;
  backward(net.second, tape.hidden, grad_pre, grads.second, &grad_hidden);
  auto gh = grad_hidden.values();
  auto pre = tape.hidden_pre.values();
  for (std::size_t i = 0; i < gh.size(); ++i) {
    if (pre[i] <= 0.0) gh[i] = 0.0;
  }
  backward(net.first, tape.input, grad_hidden, grads.first, grad_input);
}

// ---------------------------------------------------------------------------
// Losses

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;
};

/// Mean binary cross-entropy. The gradient is taken at the clamped
/// probability so saturated predictions still receive signal.
inline LossResult bce_loss(std::span<const double> p, std::span<const double> y) {
  if (p.size() != y.size()) throw Error(ErrorKind::InvalidArgument, "bce_loss shape mismatch");
  LossResult out;
  out.grad.resize(p.size());
  if (p.empty()) return out;
  const double n = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbEps, 1.0 - kProbEps);
    out.value -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    out.grad[i] = (-(y[i] / q) + (1.0 - y[i]) / (1.0 - q)) / n;
  }
  out.value /= n;
  return out;
}

/// Boundary regression loss over positives. pred/target hold (start, end)
/// pairs per sample; positive holds one 0/1 label per sample. Subgradient
/// at 0 is 0.
inline LossResult l1_loss(std::span<const double> pred, std::span<const double> target,
                          std::span<const int> positive) {
  if (pred.size() != target.size() || pred.size() != 2 * positive.size()) {
    throw Error(ErrorKind::InvalidArgument, "l1_loss shape mismatch");
  }
  LossResult out;
  out.grad.assign(pred.size(), 0.0);
  const auto n_pos = static_cast<double>(std::count_if(positive.begin(), positive.end(), [](int l) { return l != 0; }));
  if (n_pos == 0.0) return out;
  for (std::size_t s = 0; s < positive.size(); ++s) {
    if (positive[s] == 0) continue;
    for (std::size_t c = 0; c < 2; ++c) {
      const double diff = pred[2 * s + c] - target[2 * s + c];
      out.value += std::abs(diff);
      out.grad[2 * s + c] = (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0) / n_pos;
    }
  }
  out.value /= n_pos;
  return out;
}

}  // namespace ctap::nn
