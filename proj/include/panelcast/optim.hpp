#pragma once

// Training loss, Adam and gradient-norm clipping.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "panelcast/layers.hpp"
#include "panelcast/tensor.hpp"

namespace panelcast {

// Mean of squared differences over every element.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moments per parameter plus the step count.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t step = 0;
};

// One bias-corrected Adam update using the gradients stored on `params`.
// Parameters without a gradient are left alone.
inline void adam_step(AdamState& state, const NamedParameters& params, const AdamOptions& opt) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.numel(), 0.0);
      state.v.emplace_back(t.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter list changed between steps");
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].second;
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
      w[i] -= opt.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.epsilon);
    }
  }
}

// Rescales all gradients so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping.
inline double clip_grad_norm(const NamedParameters& params, double max_norm) {
  double ss = 0.0;
  for (const auto& [name, t] : params)
    if (t.has_grad())
      for (double g : t.grad()) ss += g * g;
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto [name, t] : params)
      if (t.has_grad())
        for (double& g : t.mutable_grad()) g *= f;
  }
  return norm;
}

inline void zero_grads(const NamedParameters& params) {
  for (auto [name, t] : params) t.zero_grad();
}

}  // namespace panelcast
