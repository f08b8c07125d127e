#pragma once

// Chaotic neural oscillatory attention.
//
// Query-key affinities S = ReLU(Q K^T) drive a Lee-type excitatory/inhibitory
// oscillator pair. Its output
//
//   Osc(S) = (E - I) * exp(clamp(-k S^2, -50, 50)) + ReLU(S)
//
// replaces the raw scores before the softmax. Each head's output is scaled by
// a stabilizer exp(-gamma * ||alpha - alpha_prev||_F^2) that compares the new
// attention map with the one from the previous forward pass.
//
// cross_attention() is the plain scaled dot-product comparator used when the
// oscillator is switched off.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "canoe/dcg.hpp"
#include "canoe/layers.hpp"

namespace canoe::cnoa {

struct OscillatorParams {
  double e1 = 1.0;      // excitatory self-feedback
  double e2 = -1.0;     // inhibitory -> excitatory
  double i1 = 1.0;      // excitatory -> inhibitory
  double i2 = 1.0;      // inhibitory self-sustain
  double tau_e = 0.0;   // excitatory threshold
  double tau_i = 0.0;   // inhibitory threshold
  double k = -500.0;    // decay-rate coefficient
  std::size_t iterations = 1;
  double gamma = 1.0;   // stabilization strength

  void validate() const {
    require(iterations >= 1, "OscillatorParams: iterations must be >= 1");
    require(gamma >= 0.0, "OscillatorParams: gamma must be >= 0");
    for (double v : {e1, e2, i1, i2, tau_e, tau_i, k, gamma}) {
      require(std::isfinite(v), "OscillatorParams: all coefficients must be finite");
    }
  }
};

struct OscillatorState {
  dcg::Tensor excitatory;
  dcg::Tensor inhibitory;
};

// Runs the recurrence from E = I = 0 for params.iterations steps:
//   E <- ReLU(e1 E + e2 I + S - tau_e)
//   I <- ReLU(i1 E + i2 I - tau_i)
inline OscillatorState oscillator_iterate(const dcg::Tensor& scores, const OscillatorParams& p) {
  p.validate();
  if (!dcg::all_finite(scores.values())) {
    throw NumericFault("oscillator_iterate: non-finite scores");
  }
  dcg::Tensor e = dcg::Tensor::zeros(scores.shape());
  dcg::Tensor i = dcg::Tensor::zeros(scores.shape());
  for (std::size_t t = 0; t < p.iterations; ++t) {
    dcg::Tensor next_e =
        dcg::relu(dcg::add_scalar(dcg::scale(e, p.e1) + dcg::scale(i, p.e2) + scores, -p.tau_e));
    dcg::Tensor next_i = dcg::relu(dcg::add_scalar(dcg::scale(e, p.i1) + dcg::scale(i, p.i2),
                                                   -p.tau_i));
    e = std::move(next_e);
    i = std::move(next_i);
  }
  return {e, i};
}

inline dcg::Tensor oscillator_output(const dcg::Tensor& excitatory, const dcg::Tensor& inhibitory,
                                     const dcg::Tensor& scores, const OscillatorParams& p) {
  require(excitatory.shape() == scores.shape() && inhibitory.shape() == scores.shape(),
          "oscillator_output: shape mismatch");
  const dcg::Tensor decay = dcg::exp(
      dcg::clamp(dcg::scale(dcg::square(scores), -p.k), -dcg::kExpClamp, dcg::kExpClamp));
  return (excitatory - inhibitory) * decay + dcg::relu(scores);
}

inline dcg::Tensor oscillate(const dcg::Tensor& scores, const OscillatorParams& p) {
  const auto [e, i] = oscillator_iterate(scores, p);
  return oscillator_output(e, i, scores, p);
}

// Detached per-head attention maps from the previous forward pass. Empty
// means "uniform".
struct CnoaState {
  dcg::Shape shape;
  std::vector<std::vector<double>> alpha_prev;

  bool empty() const { return alpha_prev.empty(); }
  void reset() {
    shape.clear();
    alpha_prev.clear();
  }
};

class AttentionProjections {
 public:
  AttentionProjections() = default;
  AttentionProjections(dcg::ParamRegistry& registry, const std::string& name,
                       std::size_t query_dim, std::size_t key_dim, std::size_t model_dim,
                       std::size_t heads, layers::Rng& rng)
      : heads_(heads), model_dim_(model_dim) {
    require(heads >= 1 && model_dim % heads == 0,
            "AttentionProjections: model dim must be divisible by the head count");
    const auto init = [&](const std::string& suffix, std::size_t in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      return registry.add(name + suffix, {in, model_dim},
                          layers::uniform_values(in * model_dim, bound, rng));
    };
    w_query_ = init(".w_query", query_dim);
    w_key_ = init(".w_key", key_dim);
    w_value_ = init(".w_value", key_dim);
    w_out_ = init(".w_out", model_dim);
  }

  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return model_dim_ / heads_; }
  std::size_t model_dim() const { return model_dim_; }
  const dcg::Tensor& w_query() const { return w_query_; }
  const dcg::Tensor& w_key() const { return w_key_; }
  const dcg::Tensor& w_value() const { return w_value_; }
  const dcg::Tensor& w_out() const { return w_out_; }

 private:
  std::size_t heads_ = 1;
  std::size_t model_dim_ = 0;
  dcg::Tensor w_query_;
  dcg::Tensor w_key_;
  dcg::Tensor w_value_;
  dcg::Tensor w_out_;
};

struct AttentionOutput {
  dcg::Tensor output;                    // [batch, queries, model_dim]
  std::vector<dcg::Tensor> weights;      // per head, [batch, queries, keys]
  std::vector<dcg::Tensor> stabilizers;  // per head, [batch, 1, 1]
  CnoaState state;
};

namespace detail {

struct Projected {
  dcg::Tensor q, k, v;
};

inline Projected project(const dcg::Tensor& queries, const dcg::Tensor& keys,
                         const dcg::Tensor& values, const AttentionProjections& proj) {
  require(queries.rank() == 3, "attention: queries must be [batch, queries, dim]");
  require(keys.rank() == values.rank() && (keys.rank() == 2 || keys.rank() == 3),
          "attention: keys and values must share rank 2 or 3");
  if (keys.dim(-2) != values.dim(-2)) {
    throw ContractViolation("attention: key and value sequence lengths differ (" +
                            std::to_string(keys.dim(-2)) + " vs " +
                            std::to_string(values.dim(-2)) + ")");
  }
  if (keys.rank() == 3) {
    require(keys.dim(0) == queries.dim(0), "attention: batch sizes differ");
  }
  for (const auto* t : {&queries, &keys, &values}) {
    if (!dcg::all_finite(t->values())) {
      throw NumericFault("attention: non-finite input");
    }
  }
  return {dcg::matmul(queries, proj.w_query()), dcg::matmul(keys, proj.w_key()),
          dcg::matmul(values, proj.w_value())};
}

inline dcg::Tensor head_slice(const dcg::Tensor& x, std::size_t head, std::size_t head_dim) {
  return dcg::slice(x, -1, head * head_dim, (head + 1) * head_dim);
}

}  // namespace detail

inline AttentionOutput cnoa_attention(const dcg::Tensor& queries, const dcg::Tensor& keys,
                                      const dcg::Tensor& values, const AttentionProjections& proj,
                                      const OscillatorParams& params, const CnoaState& previous) {
  params.validate();
  const auto [q, k, v] = detail::project(queries, keys, values, proj);
  const std::size_t batch = queries.dim(0);
  const std::size_t n_queries = queries.dim(1);
  const std::size_t n_keys = keys.dim(-2);
  const std::size_t hd = proj.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const dcg::Shape alpha_shape{batch, n_queries, n_keys};
  const bool have_prev = !previous.empty() && previous.shape == alpha_shape &&
                         previous.alpha_prev.size() == proj.heads();

  AttentionOutput result;
  result.state.shape = alpha_shape;
  std::vector<dcg::Tensor> heads;
  for (std::size_t r = 0; r < proj.heads(); ++r) {
    const dcg::Tensor qr = detail::head_slice(q, r, hd);
    const dcg::Tensor kr = detail::head_slice(k, r, hd);
    const dcg::Tensor vr = detail::head_slice(v, r, hd);
    const dcg::Tensor scores = dcg::relu(dcg::matmul(qr, kr, /*transpose_b=*/true));
    const dcg::Tensor alpha = dcg::softmax(dcg::scale(oscillate(scores, params), inv_sqrt));

    const dcg::Tensor prev =
        have_prev ? dcg::Tensor::constant(alpha_shape, previous.alpha_prev[r])
                  : dcg::Tensor::constant(alpha_shape,
                                          std::vector<double>(dcg::numel(alpha_shape),
                                                              1.0 / static_cast<double>(n_keys)));
    const dcg::Tensor drift = dcg::reshape(
        dcg::sum_last(dcg::reshape(dcg::square(alpha - prev), {batch, n_queries * n_keys})),
        {batch, 1, 1});
    const dcg::Tensor stabilizer = dcg::exp(dcg::scale(drift, -params.gamma));

    heads.push_back(dcg::matmul(alpha, vr) * stabilizer);
    result.weights.push_back(alpha);
    result.stabilizers.push_back(stabilizer);
    result.state.alpha_prev.emplace_back(alpha.values().begin(), alpha.values().end());
  }
  result.output = dcg::matmul(dcg::concat(heads, -1), proj.w_out());
  return result;
}

inline AttentionOutput cross_attention(const dcg::Tensor& queries, const dcg::Tensor& keys,
                                       const dcg::Tensor& values,
                                       const AttentionProjections& proj) {
  const auto [q, k, v] = detail::project(queries, keys, values, proj);
  const std::size_t hd = proj.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  AttentionOutput result;
  std::vector<dcg::Tensor> heads;
  for (std::size_t r = 0; r < proj.heads(); ++r) {
    const dcg::Tensor qr = detail::head_slice(q, r, hd);
    const dcg::Tensor kr = detail::head_slice(k, r, hd);
    const dcg::Tensor vr = detail::head_slice(v, r, hd);
    const dcg::Tensor alpha =
        dcg::softmax(dcg::scale(dcg::matmul(qr, kr, /*transpose_b=*/true), inv_sqrt));
    heads.push_back(dcg::matmul(alpha, vr));
    result.weights.push_back(alpha);
  }
  result.output = dcg::matmul(dcg::concat(heads, -1), proj.w_out());
  return result;
}

// Attention block that owns its projections and previous-attention state and
// can be switched between the oscillatory and the plain variant.
class ContextAttention {
 public:
  ContextAttention() = default;
  ContextAttention(dcg::ParamRegistry& registry, const std::string& name, std::size_t query_dim,
                   std::size_t key_dim, std::size_t model_dim, std::size_t heads,
                   const OscillatorParams& params, bool use_cnoa, layers::Rng& rng)
      : proj_(registry, name, query_dim, key_dim, model_dim, heads, rng),
        params_(params),
        use_cnoa_(use_cnoa) {
    params_.validate();
  }

  // With update_state = false the stored attention maps are left untouched,
  // which makes repeated calls pure (used by gradient checks).
  AttentionOutput forward(const dcg::Tensor& queries, const dcg::Tensor& keys,
                          const dcg::Tensor& values, bool update_state = true) {
    if (!use_cnoa_) {
      return cross_attention(queries, keys, values, proj_);
    }
    AttentionOutput out = cnoa_attention(queries, keys, values, proj_, params_, state_);
    if (update_state) {
      state_ = out.state;
    }
    return out;
  }

  void reset_state() { state_.reset(); }
  const CnoaState& state() const { return state_; }
  void set_state(CnoaState state) { state_ = std::move(state); }
  const AttentionProjections& projections() const { return proj_; }
  const OscillatorParams& params() const { return params_; }
  bool uses_cnoa() const { return use_cnoa_; }

 private:
  AttentionProjections proj_;
  OscillatorParams params_;
  bool use_cnoa_ = true;
  CnoaState state_;
};

}  // namespace canoe::cnoa
