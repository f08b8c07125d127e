#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "canoe/dcg.hpp"
#include "canoe/error.hpp"

namespace canoe::optim {

struct OptimizerState {
  double lr = 0.005;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

inline OptimizerState make_state(const dcg::ParamRegistry& registry, double lr,
                                 double weight_decay) {
  OptimizerState state;
  state.lr = lr;
  state.weight_decay = weight_decay;
  for (const auto& [name, p] : registry) {
    state.first_moment.emplace_back(p.size(), 0.0);
    state.second_moment.emplace_back(p.size(), 0.0);
  }
  return state;
}

// Decoupled weight decay followed by a bias-corrected Adam step. Gradients are
// zeroed afterwards.
inline void adamw_update(const dcg::ParamRegistry& registry, OptimizerState& state) {
  require(state.first_moment.size() == registry.size() &&
              state.second_moment.size() == registry.size(),
          "adamw_update: optimizer state does not match the registry");
  for (const auto& [name, p] : registry) {
    if (!p.has_grad()) {
      throw ContractViolation("adamw_update: parameter '" + name + "' has no gradient");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const double decay = 1.0 - state.lr * state.weight_decay;
  std::size_t i = 0;
  for (const auto& [name, p] : registry) {
    auto values = p.mutable_values();
    auto grad = p.mutable_grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    require(m.size() == values.size(), "adamw_update: moment buffer shape mismatch");
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad[k];
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] = values[k] * decay - state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
      grad[k] = 0.0;
    }
    ++i;
  }
}

inline double global_grad_norm(const dcg::ParamRegistry& registry) {
  double total = 0.0;
  for (const auto& [name, p] : registry) {
    for (double g : p.grad()) {
      total += g * g;
    }
  }
  return std::sqrt(total);
}

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
inline double clip_grad_norm(const dcg::ParamRegistry& registry, double max_norm) {
  const double norm = global_grad_norm(registry);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& [name, p] : registry) {
      for (double& g : p.mutable_grad()) {
        g *= s;
      }
    }
  }
  return norm;
}

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
};

// Compares backward() against central differences for every parameter entry.
// The error for one entry is |analytic - numeric| / max(1, |analytic|, |numeric|).
inline std::vector<GradCheckEntry> grad_check_detailed(
    const std::function<dcg::Tensor()>& loss_fn, const dcg::ParamRegistry& registry,
    double epsilon) {
  require(epsilon > 0.0 && epsilon <= 1e-2, "grad_check: epsilon must lie in (0, 1e-2]");
  for (const auto& [name, p] : registry) {
    p.clear_grad();
  }
  const dcg::Tensor loss = loss_fn();
  dcg::backward(loss);
  const double base = loss.item();
  if (loss_fn().item() != base) {
    throw ContractViolation("grad_check: loss function is not deterministic");
  }

  std::vector<GradCheckEntry> report;
  for (const auto& [name, p] : registry) {
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) {
      analytic.assign(p.grad().begin(), p.grad().end());
    }
    GradCheckEntry entry{name, 0.0};
    auto values = p.mutable_values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + epsilon;
      const double plus = loss_fn().item();
      values[k] = saved - epsilon;
      const double minus = loss_fn().item();
      values[k] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double denom = std::max({1.0, std::abs(analytic[k]), std::abs(numeric)});
      entry.max_relative_error =
          std::max(entry.max_relative_error, std::abs(analytic[k] - numeric) / denom);
    }
    report.push_back(std::move(entry));
  }
  return report;
}

inline double grad_check(const std::function<dcg::Tensor()>& loss_fn,
                         const dcg::ParamRegistry& registry, double epsilon) {
  double worst = 0.0;
  for (const auto& entry : grad_check_detailed(loss_fn, registry, epsilon)) {
    worst = std::max(worst, entry.max_relative_error);
  }
  return worst;
}

}  // namespace canoe::optim
