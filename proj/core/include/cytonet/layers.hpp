#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "cytonet/nn_ops.hpp"

namespace cytonet {

/// A learnable tensor plus its binding on the current tape. Binding happens
/// at every forward pass; the optimizer reads gradients through `bound`.
template <typename T>
struct Param {
  Tensor<T> value;

  typename Tape<T>::Var bound{};

  typename Tape<T>::Var bind(Tape<T>& t) {
    bound = t.leaf(value, t.params_require_grad());
    return bound;
  }
};

/// Callbacks for walking a model's state in declaration order. The order
/// defines checkpoint layout and optimizer slot assignment.
template <typename T>
struct ModelVisitor {
  std::function<void(const std::string&, Param<T>&)> param;
  std::function<void(const std::string&, Tensor<T>&)> buffer;
  std::function<void(const std::string&, std::int64_t&)> counter;
};

template <typename T>
struct Conv2d {
  int in_channels = 0, out_channels = 0, kernel = 1, stride = 1, padding = 0;
  Param<T> weight;               // (out, in, k, k)
  std::optional<Param<T>> bias;  // (out)

  Conv2d() = default;
  Conv2d(int in, int out, int k, int s = 1, int p = 0, bool with_bias = true)
      : in_channels(in), out_channels(out), kernel(k), stride(s), padding(p) {
    weight.value = Tensor<T>({out, in, k, k});
    if (with_bias) {
      bias.emplace();
      bias->value = Tensor<T>({out});
    }
  }

  typename Tape<T>::Var forward(Tape<T>& t, typename Tape<T>::Var x) {
    auto w = weight.bind(t);
    std::optional<typename Tape<T>::Var> b;
    if (bias) b = bias->bind(t);
    return ops::conv2d(t, x, w, b, stride, padding);
  }

  void visit(ModelVisitor<T>& v, const std::string& prefix) {
    v.param(prefix + ".weight", weight);
    if (bias) v.param(prefix + ".bias", *bias);
  }
};

template <typename T>
struct BatchNorm2d {
  int channels = 0;
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);
  bool track_stats = true;  // test hook: freeze running statistics
  Param<T> gamma, beta;
  ops::BatchNormBuffers<T> buffers;

  BatchNorm2d() : buffers(1) {}
  explicit BatchNorm2d(int c) : channels(c), buffers(c) {
    gamma.value = Tensor<T>::ones({c});
    beta.value = Tensor<T>({c});
  }

  typename Tape<T>::Var forward(Tape<T>& t, typename Tape<T>::Var x, Mode mode) {
    auto g = gamma.bind(t);
    auto b = beta.bind(t);
    return ops::batch_norm(t, x, g, b, buffers, mode, eps, momentum, track_stats);
  }

  void visit(ModelVisitor<T>& v, const std::string& prefix) {
    v.param(prefix + ".gamma", gamma);
    v.param(prefix + ".beta", beta);
    v.buffer(prefix + ".running_mean", buffers.running_mean);
    v.buffer(prefix + ".running_var", buffers.running_var);
    v.counter(prefix + ".num_batches", buffers.num_batches);
  }
};

template <typename T>
struct Linear {
  int in_features = 0, out_features = 0;
  Param<T> weight;  // (out, in)
  Param<T> bias;    // (out)

  Linear() = default;
  Linear(int in, int out) : in_features(in), out_features(out) {
    weight.value = Tensor<T>({out, in});
    bias.value = Tensor<T>({out});
  }

  typename Tape<T>::Var forward(Tape<T>& t, typename Tape<T>::Var x) {
    auto w = weight.bind(t);
    auto b = bias.bind(t);
    return ops::dense(t, x, w, std::optional<typename Tape<T>::Var>(b));
  }

  void visit(ModelVisitor<T>& v, const std::string& prefix) {
    v.param(prefix + ".weight", weight);
    v.param(prefix + ".bias", bias);
  }
};

}  // namespace cytonet
