#pragma once

#include <cmath>
#include <vector>

#include "cytonet/layers.hpp"

namespace cytonet {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter registry. Slots are assigned in
/// registration order; moments start at zero.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  std::int64_t step_count() const { return t_; }

  /// grads[i] may be null for parameters that did not reach the loss; their
  /// moments and values stay untouched that step.
  void step(const std::vector<const Tensor<T>*>& grads) {
    if (grads.size() != params_.size()) {
      throw Error("adam: gradient slot count mismatch");
    }
    t_ += 1;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!grads[i]) continue;
      const Tensor<T>& g = *grads[i];
      if (!g.all_finite()) {
        throw NumericError("adam: non-finite gradient for parameter slot " + std::to_string(i));
      }
      auto& p = params_[i]->value;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        const double mk = cfg_.beta1 * static_cast<double>(m[k]) + (1.0 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * static_cast<double>(v[k]) + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double mhat = mk / c1;
        const double vhat = vk / c2;
        p[k] = static_cast<T>(static_cast<double>(p[k]) -
                              cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  std::vector<Param<T>*> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace cytonet
