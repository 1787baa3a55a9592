#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cytonet/tensor.hpp"

namespace cytonet {

/// Records every primitive applied during a forward pass and replays local
/// vector-Jacobian rules in reverse topological order. One tape serves one
/// forward/backward pair; tensors stored on the tape are immutable values.
template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  explicit Tape(bool recording) : recording_(recording) {}

  bool recording() const { return recording_; }

  /// Whether parameter leaves bound during this recording ask for gradients.
  bool params_require_grad() const { return params_require_grad_; }
  void set_params_require_grad(bool on) { params_require_grad_ = on; }

  Var leaf(Tensor<T> value, bool requires_grad = true) {
    values_.push_back(std::move(value));
    requires_.push_back(recording_ && requires_grad);
    grads_.emplace_back();
    return Var{static_cast<int>(values_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const {
    check_var(v);
    return values_[static_cast<std::size_t>(v.id)];
  }

  bool requires_grad(Var v) const {
    check_var(v);
    return requires_[static_cast<std::size_t>(v.id)] != 0;
  }

  /// True when a node recorded over these inputs would take part in backward.
  /// Ops use it to skip capturing backward-only context (argmax maps, saved
  /// activations) on forward-only tapes.
  bool will_record(std::initializer_list<Var> inputs) const {
    if (!recording_) return false;
    for (Var v : inputs) {
      if (v.valid() && requires_grad(v)) return true;
    }
    return false;
  }

  /// Appends the output of a primitive. `fn(tape, out)` accumulates input
  /// gradients from grad(out); it is dropped when no input needs a gradient.
  /// Non-finite outputs abort with the offending node identified.
  Var record(const char* op, Tensor<T> value, std::initializer_list<Var> inputs,
             std::function<void(Tape&, Var)> fn) {
    bool needs = false;
    for (Var v : inputs) {
      if (v.valid() && requires_grad(v)) needs = true;
    }
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite value produced by op '") + op +
                         "' (node " + std::to_string(nodes_.size()) + ")");
    }
    values_.push_back(std::move(value));
    requires_.push_back(recording_ && needs);
    grads_.emplace_back();
    Var out{static_cast<int>(values_.size()) - 1};
    if (recording_ && needs && fn) {
      nodes_.push_back(NodeRec{op, out.id, std::move(fn)});
    }
    return out;
  }

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_values() const { return values_.size(); }

  /// Reverse accumulation seeded with ones; requires a scalar output.
  void backward(Var output) {
    const Tensor<T>& out = value(output);
    if (out.size() != 1) {
      throw ShapeError("backward without an explicit seed requires a scalar output, got " +
                       shape_str(out.shape()));
    }
    backward(output, Tensor<T>::ones(out.shape()));
  }

  /// Reverse accumulation from one selected scalar of the output.
  void backward_select(Var output, std::size_t flat_index) {
    const Tensor<T>& out = value(output);
    if (flat_index >= out.size()) {
      throw Error("backward_select: index " + std::to_string(flat_index) +
                  " out of range for output " + shape_str(out.shape()));
    }
    Tensor<T> seed(out.shape());
    seed[flat_index] = T(1);
    backward(output, std::move(seed));
  }

  void backward(Var output, Tensor<T> seed) {
    check_var(output);
    if (!recording_) throw Error("backward called on a non-recording tape");
    if (backward_done_) throw Error("backward already run on this tape");
    if (nodes_.empty() && !requires_[static_cast<std::size_t>(output.id)]) {
      throw Error("backward called before any differentiable forward was recorded");
    }
    if (!seed.same_shape(value(output))) {
      throw ShapeError("backward seed shape " + shape_str(seed.shape()) +
                       " does not match output " + shape_str(value(output).shape()));
    }
    grads_[static_cast<std::size_t>(output.id)] = std::move(seed);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (grads_[static_cast<std::size_t>(it->out)].has_value()) {
        it->fn(*this, Var{it->out});
      }
    }
    backward_done_ = true;
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      if (grads_[i].has_value() && !grads_[i]->all_finite()) {
        throw NumericError("non-finite gradient accumulated for value " + std::to_string(i));
      }
    }
    nodes_.clear();  // closures (and their captured context) are no longer needed
  }

  bool backward_done() const { return backward_done_; }

  bool has_grad(Var v) const {
    check_var(v);
    return grads_[static_cast<std::size_t>(v.id)].has_value();
  }

  const Tensor<T>& grad(Var v) const {
    check_var(v);
    const auto& g = grads_[static_cast<std::size_t>(v.id)];
    if (!g.has_value()) {
      throw Error("no gradient accumulated for value " + std::to_string(v.id) +
                  (backward_done_ ? " (not on any path to the output)" : " (backward not run)"));
    }
    return *g;
  }

  /// Zero-initialized gradient buffer for accumulation inside backward fns.
  Tensor<T>& grad_acc(Var v) {
    check_var(v);
    auto& g = grads_[static_cast<std::size_t>(v.id)];
    if (!g.has_value()) g.emplace(value(v).shape());
    return *g;
  }

  // -- kink tracking ---------------------------------------------------------
  // Finite-difference checks are only meaningful when the probe does not
  // cross a ReLU/max-pool kink. Ops with kinks report their distance to the
  // nearest kink and fold their activation pattern (ReLU sign masks, max-pool
  // argmax choices) into a fingerprint; a probe that changes the fingerprint
  // crossed a kink and is not FD-measurable.
  void track_kink_margin(bool on) {
    track_margin_ = on;
    margin_ = std::numeric_limits<double>::infinity();
    pattern_ = 1469598103934665603ULL;
  }
  bool tracking_kink_margin() const { return track_margin_; }
  void note_kink_margin(double m) {
    if (m < margin_) margin_ = m;
  }
  double kink_margin() const { return margin_; }
  void note_activation_pattern(std::uint64_t h) {
    pattern_ = (pattern_ ^ h) * 1099511628211ULL;
  }
  std::uint64_t activation_pattern() const { return pattern_; }

 private:
  struct NodeRec {
    const char* op;
    int out;
    std::function<void(Tape&, Var)> fn;
  };

  void check_var(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= values_.size()) {
      throw Error("invalid tape variable");
    }
  }

  std::vector<Tensor<T>> values_;
  std::vector<char> requires_;
  std::vector<std::optional<Tensor<T>>> grads_;
  std::vector<NodeRec> nodes_;
  bool recording_ = true;
  bool params_require_grad_ = true;
  bool backward_done_ = false;
  bool track_margin_ = false;
  double margin_ = std::numeric_limits<double>::infinity();
  std::uint64_t pattern_ = 1469598103934665603ULL;
};

}  // namespace cytonet
