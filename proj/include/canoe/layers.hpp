#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "canoe/dcg.hpp"

namespace canoe::layers {

using Rng = std::mt19937_64;

inline std::vector<double> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(n);
  for (double& x : v) {
    x = dist(rng);
  }
  return v;
}

// y = x W + b over the last axis of x. W is [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(dcg::ParamRegistry& registry, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng, bool bias = true)
      : in_(in), out_(out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = registry.add(name + ".weight", {in, out}, uniform_values(in * out, bound, rng));
    if (bias) {
      bias_ = registry.add(name + ".bias", {out}, std::vector<double>(out, 0.0));
    }
  }

  dcg::Tensor operator()(const dcg::Tensor& x) const {
    dcg::Tensor y = x.rank() == 1 ? dcg::reshape(dcg::matmul(dcg::reshape(x, {1, in_}), weight_),
                                                 {out_})
                                  : dcg::matmul(x, weight_);
    return bias_.defined() ? y + bias_ : y;
  }

  const dcg::Tensor& weight() const { return weight_; }
  const dcg::Tensor& bias() const { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  dcg::Tensor weight_;
  dcg::Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(dcg::ParamRegistry& registry, const std::string& name, std::size_t width) {
    gain_ = registry.add(name + ".gain", {width}, std::vector<double>(width, 1.0));
    bias_ = registry.add(name + ".bias", {width}, std::vector<double>(width, 0.0));
  }

  dcg::Tensor operator()(const dcg::Tensor& x) const { return dcg::layer_norm(x, gain_, bias_); }

 private:
  dcg::Tensor gain_;
  dcg::Tensor bias_;
};

// Linear -> ReLU -> Linear.
class Mlp2 {
 public:
  Mlp2() = default;
  Mlp2(dcg::ParamRegistry& registry, const std::string& name, std::size_t in, std::size_t hidden,
       std::size_t out, Rng& rng)
      : first_(registry, name + ".fc1", in, hidden, rng),
        second_(registry, name + ".fc2", hidden, out, rng) {}

  dcg::Tensor operator()(const dcg::Tensor& x) const { return second_(dcg::relu(first_(x))); }

  const Linear& first() const { return first_; }
  const Linear& second() const { return second_; }

 private:
  Linear first_;
  Linear second_;
};

// Inverted dropout with its own seedable mask stream. Identity when disabled
// or when rate is 0.
class Dropout {
 public:
  explicit Dropout(double rate = 0.0, std::uint64_t seed = 0) : rate_(rate), rng_(seed) {
    require(rate >= 0.0 && rate < 1.0, "Dropout: rate must lie in [0, 1)");
  }

  dcg::Tensor operator()(const dcg::Tensor& x, bool training) {
    if (!training || rate_ == 0.0) {
      return x;
    }
    std::bernoulli_distribution keep(1.0 - rate_);
    const double s = 1.0 / (1.0 - rate_);
    std::vector<double> mask(x.size());
    for (double& m : mask) {
      m = keep(rng_) ? s : 0.0;
    }
    return x * dcg::Tensor::constant(x.shape(), std::move(mask));
  }

  double rate() const { return rate_; }
  Rng& rng() { return rng_; }

 private:
  double rate_;
  Rng rng_;
};

}  // namespace canoe::layers
