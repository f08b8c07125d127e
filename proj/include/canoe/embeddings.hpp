#pragma once

// Cyclic time-slot embeddings smoothed by a Gaussian kernel over periodic
// slot distance, and plain lookup tables for users and locations.

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <vector>

#include "canoe/dcg.hpp"
#include "canoe/layers.hpp"

namespace canoe::embeddings {

inline constexpr double kInitBound = 0.1;

inline std::size_t periodic_distance(std::size_t tau, std::size_t h, std::size_t slots) {
  require(tau < slots && h < slots, "periodic_distance: slot out of range");
  const std::size_t diff = tau > h ? tau - h : h - tau;
  return std::min(diff, slots - diff);
}

// Row-major [slots x slots] matrix; row tau holds the normalized kernel
// weights exp(-dist^2 / 2 sigma^2) over all slots h.
inline std::vector<double> smoothing_weights(std::size_t slots, double sigma) {
  require(slots >= 1, "smoothing_weights: need at least one slot");
  require(sigma > 0.0, "smoothing_weights: sigma must be positive");
  std::vector<double> w(slots * slots);
  for (std::size_t tau = 0; tau < slots; ++tau) {
    double z = 0.0;
    for (std::size_t h = 0; h < slots; ++h) {
      const auto d = static_cast<double>(periodic_distance(tau, h, slots));
      w[tau * slots + h] = std::exp(-(d * d) / (2.0 * sigma * sigma));
      z += w[tau * slots + h];
    }
    for (std::size_t h = 0; h < slots; ++h) {
      w[tau * slots + h] /= z;
    }
  }
  return w;
}

class SmoothedTimeEmbedding {
 public:
  SmoothedTimeEmbedding() = default;
  SmoothedTimeEmbedding(dcg::ParamRegistry& registry, const std::string& name, std::size_t slots,
                        std::size_t dim, double sigma, layers::Rng& rng)
      : slots_(slots), dim_(dim), sigma_(sigma) {
    base_ = registry.add(name + ".base", {slots, dim},
                         layers::uniform_values(slots * dim, kInitBound, rng));
    weights_ = dcg::Tensor::constant({slots, slots}, smoothing_weights(slots, sigma));
  }

  // All smoothed rows, [slots x dim].
  dcg::Tensor table() const { return dcg::matmul(weights_, base_); }

  dcg::Tensor lookup(std::size_t tau) const {
    require(tau < slots_, "SmoothedTimeEmbedding: slot out of range");
    const std::size_t idx[] = {tau};
    return dcg::reshape(dcg::gather_rows(table(), idx), {dim_});
  }

  const dcg::Tensor& base() const { return base_; }
  const dcg::Tensor& weights() const { return weights_; }
  std::size_t slots() const { return slots_; }
  std::size_t dim() const { return dim_; }
  double sigma() const { return sigma_; }

 private:
  std::size_t slots_ = 0;
  std::size_t dim_ = 0;
  double sigma_ = 1.0;
  dcg::Tensor base_;
  dcg::Tensor weights_;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(dcg::ParamRegistry& registry, const std::string& name, std::size_t count,
                 std::size_t dim, layers::Rng& rng)
      : count_(count), dim_(dim) {
    require(count > 0 && dim > 0, "EmbeddingTable: count and dim must be positive");
    table_ = registry.add(name, {count, dim}, layers::uniform_values(count * dim, kInitBound, rng));
  }

  dcg::Tensor lookup(std::size_t index) const {
    const std::size_t idx[] = {index};
    return dcg::reshape(lookup(idx), {dim_});
  }

  // [indices.size() x dim]
  dcg::Tensor lookup(std::span<const std::size_t> indices) const {
    return dcg::gather_rows(table_, indices);
  }

  const dcg::Tensor& table() const { return table_; }
  std::size_t count() const { return count_; }
  std::size_t dim() const { return dim_; }

 private:
  std::size_t count_ = 0;
  std::size_t dim_ = 0;
  dcg::Tensor table_;
};

}  // namespace canoe::embeddings
