#pragma once

#include <functional>
#include <string>

#include "cytonet/models.hpp"

namespace cytonet {

/// Per-pixel signed attributions aligned to one input image. Attribution
/// values are kept in double regardless of the model precision: the
/// quadrature accumulates in double and the completeness bookkeeping depends
/// on it.
struct AttributionMap {
  Tensor<double> attributions;  // input shape (3,H,W)
  int target_class = 0;
  int steps = 0;
  std::string baseline_desc;
  double output_at_input = 0;     // F(x), pre-softmax logit of the target
  double output_at_baseline = 0;  // F(x')
  double completeness_gap = 0;    // |sum(attributions) - (F(x) - F(x'))|

  double attribution_sum() const {
    double s = 0;
    for (std::size_t i = 0; i < attributions.size(); ++i) s += attributions[i];
    return s;
  }
};

/// A scalar-vector function under the tape: maps a (1,3,H,W) input var to a
/// (1,K) logits var. Models wrap into this; tests can build ad-hoc graphs.
template <typename T>
using LogitFn = std::function<typename Tape<T>::Var(Tape<T>&, typename Tape<T>::Var)>;

template <typename T>
LogitFn<T> model_logit_fn(NetworkGraph<T>& model, Mode mode = Mode::eval) {
  return [&model, mode](Tape<T>& t, typename Tape<T>::Var x) {
    return model.forward(t, x, mode);
  };
}

namespace explain_detail {

template <typename T>
Tensor<T> input_gradient(const LogitFn<T>& fn, const Tensor<T>& point, int target, double* value) {
  Tape<T> tape(true);
  tape.set_params_require_grad(false);
  Shape batched = point.shape();
  batched.insert(batched.begin(), 1);
  auto in = tape.leaf(Tensor<T>(batched, point.vec()), true);
  auto out = fn(tape, in);
  const auto& logits = tape.value(out);
  if (logits.size() <= static_cast<std::size_t>(target) || target < 0) {
    throw Error("attribution target " + std::to_string(target) + " out of range");
  }
  if (value) *value = static_cast<double>(logits[static_cast<std::size_t>(target)]);
  tape.backward_select(out, static_cast<std::size_t>(target));
  const Tensor<T>& g = tape.grad(in);
  return Tensor<T>(point.shape(), g.vec());
}

template <typename T>
double logit_value(const LogitFn<T>& fn, const Tensor<T>& point, int target) {
  Tape<T> tape(false);
  tape.set_params_require_grad(false);
  Shape batched = point.shape();
  batched.insert(batched.begin(), 1);
  auto in = tape.leaf(Tensor<T>(batched, point.vec()), false);
  auto out = fn(tape, in);
  const auto& logits = tape.value(out);
  if (logits.size() <= static_cast<std::size_t>(target) || target < 0) {
    throw Error("attribution target " + std::to_string(target) + " out of range");
  }
  return static_cast<double>(logits[static_cast<std::size_t>(target)]);
}

}  // namespace explain_detail

/// Midpoint-Riemann integrated gradients on the pre-softmax logit of
/// `target`:
///   IG_i = (x_i - x'_i) * (1/m) * sum_k dF(x' + (k-0.5)/m * (x - x'))/dx_i.
/// Gradient sums run in ascending k and accumulate in double.
template <typename T>
AttributionMap integrated_gradients(const LogitFn<T>& fn, const Tensor<T>& x,
                                    const Tensor<T>& baseline, int steps, int target) {
  if (!x.same_shape(baseline)) {
    throw ShapeError("integrated_gradients: baseline shape " + shape_str(baseline.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  if (steps < 1) throw ConfigError("integrated_gradients: steps must be >= 1");

  AttributionMap map;
  map.steps = steps;
  map.target_class = target;
  map.attributions = Tensor<double>(x.shape());

  Tensor<double> acc(x.shape());
  Tensor<T> point(x.shape());
  for (int k = 1; k <= steps; ++k) {
    const double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      point[i] = static_cast<T>(static_cast<double>(baseline[i]) +
                                alpha * (static_cast<double>(x[i]) - static_cast<double>(baseline[i])));
    }
    const Tensor<T> g = explain_detail::input_gradient(fn, point, target, nullptr);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(g[i]);
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    map.attributions[i] = (static_cast<double>(x[i]) - static_cast<double>(baseline[i])) *
                          (acc[i] / static_cast<double>(steps));
  }
  map.output_at_input = explain_detail::logit_value(fn, x, target);
  map.output_at_baseline = explain_detail::logit_value(fn, baseline, target);
  map.completeness_gap =
      std::abs(map.attribution_sum() - (map.output_at_input - map.output_at_baseline));
  return map;
}

/// Raw input gradient of the target logit at x.
template <typename T>
Tensor<double> saliency(const LogitFn<T>& fn, const Tensor<T>& x, int target) {
  const Tensor<T> g = explain_detail::input_gradient(fn, x, target, nullptr);
  return g.template cast<double>();
}

/// Text sidecar describing one attribution run.
std::string format_attribution_report(const AttributionMap& map, int predicted_class,
                                      const std::string& source_id);

}  // namespace cytonet
