#pragma once

#include <functional>
#include <limits>

#include "cytonet/autograd.hpp"
#include "cytonet/tensor.hpp"

namespace cytonet {

/// Central-difference estimate (f(x+h*e_i) - f(x-h*e_i)) / (2h) per element.
/// Independent of the reverse-mode path: only forward evaluations of f.
template <typename T>
Tensor<T> finite_difference_gradient(const std::function<double(const Tensor<T>&)>& f,
                                     const Tensor<T>& x, double h) {
  if (!(h > 0)) throw NumericError("finite_difference_gradient: step size must be > 0");
  Tensor<T> grad(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = static_cast<T>(static_cast<double>(orig) + h);
    const double fp = f(probe);
    probe[i] = static_cast<T>(static_cast<double>(orig) - h);
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_difference_gradient: non-finite value at probe point " +
                         std::to_string(i));
    }
    grad[i] = static_cast<T>((fp - fm) / (2.0 * h));
  }
  return grad;
}

struct GradCheckReport {
  double max_rel_err = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // probes that crossed a ReLU/max-pool kink
  std::size_t worst_index = 0;
  double kink_margin = std::numeric_limits<double>::infinity();

  double skip_fraction() const {
    const std::size_t total = checked + skipped;
    return total == 0 ? 1.0 : static_cast<double>(skipped) / static_cast<double>(total);
  }
};

/// Compares reverse-mode gradients of a scalar-valued builder against the
/// central-difference oracle. `build(tape, leaf)` must wire `leaf` into the
/// computation (as its input or as a parameter slot) and return a scalar.
///
/// Probes whose activation pattern (ReLU signs, max-pool argmax) differs from
/// the pattern at x0 crossed a kink inside the probe interval; the derivative
/// is not FD-measurable there and the element is skipped rather than compared.
/// Relative error per element: |ad - fd| / max(|ad| + |fd|, 1).
template <typename T, typename BuildFn>
GradCheckReport check_gradient(BuildFn&& build, const Tensor<T>& x0, double h) {
  GradCheckReport rep;

  Tape<T> tape(true);
  tape.track_kink_margin(true);
  auto leaf = tape.leaf(x0, true);
  auto out = build(tape, leaf);
  if (tape.value(out).size() != 1) {
    throw ShapeError("check_gradient: builder must produce a scalar");
  }
  const std::uint64_t pattern0 = tape.activation_pattern();
  tape.backward(out);
  const Tensor<T> ad = tape.grad(leaf);
  rep.kink_margin = tape.kink_margin();

  auto eval = [&build](const Tensor<T>& xp, std::uint64_t* pattern) {
    Tape<T> t2(false);
    t2.track_kink_margin(true);
    auto l2 = t2.leaf(xp, false);
    auto o2 = build(t2, l2);
    if (pattern) *pattern = t2.activation_pattern();
    return static_cast<double>(t2.value(o2)[0]);
  };

  Tensor<T> probe = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const T orig = probe[i];
    std::uint64_t pat_plus = 0, pat_minus = 0;
    probe[i] = static_cast<T>(static_cast<double>(orig) + h);
    const double fp = eval(probe, &pat_plus);
    probe[i] = static_cast<T>(static_cast<double>(orig) - h);
    const double fm = eval(probe, &pat_minus);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("check_gradient: non-finite value at probe point " + std::to_string(i));
    }
    if (pat_plus != pattern0 || pat_minus != pattern0) {
      ++rep.skipped;
      continue;
    }
    ++rep.checked;
    const double fd = (fp - fm) / (2.0 * h);
    const double a = static_cast<double>(ad[i]);
    const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1.0);
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
    }
  }
  return rep;
}

}  // namespace cytonet
