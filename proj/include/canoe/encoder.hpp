#pragma once

// Tri-pair interaction encoder: user-location (topic mixture through an MLP),
// time-user (oscillatory attention from a user/slot query over the smoothed
// slot table) and location-time (causal transformer over the context window).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "canoe/batch.hpp"
#include "canoe/cnoa.hpp"
#include "canoe/dcg.hpp"
#include "canoe/embeddings.hpp"
#include "canoe/layers.hpp"
#include "canoe/model_config.hpp"
#include "canoe/topics.hpp"

namespace canoe::encoder {

// Fixed sinusoidal table, row-major [len x dim].
inline std::vector<double> sinusoidal_encoding(std::size_t len, std::size_t dim) {
  std::vector<double> pe(len * dim);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe[pos * dim + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// Multi-head self-attention with a causal mask; x is [batch, len, dim].
class CausalSelfAttention {
 public:
  CausalSelfAttention() = default;
  CausalSelfAttention(dcg::ParamRegistry& registry, const std::string& name, std::size_t dim,
                      std::size_t heads, layers::Rng& rng)
      : heads_(heads),
        head_dim_(dim / heads),
        query_(registry, name + ".query", dim, dim, rng),
        key_(registry, name + ".key", dim, dim, rng),
        value_(registry, name + ".value", dim, dim, rng),
        out_(registry, name + ".out", dim, dim, rng) {
    require(heads >= 1 && dim % heads == 0, "CausalSelfAttention: heads must divide dim");
  }

  dcg::Tensor operator()(const dcg::Tensor& x) const {
    const dcg::Tensor q = query_(x);
    const dcg::Tensor k = key_(x);
    const dcg::Tensor v = value_(x);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim_));
    std::vector<dcg::Tensor> heads;
    for (std::size_t r = 0; r < heads_; ++r) {
      const std::size_t lo = r * head_dim_;
      const std::size_t hi = lo + head_dim_;
      const dcg::Tensor scores =
          dcg::scale(dcg::matmul(dcg::slice(q, -1, lo, hi), dcg::slice(k, -1, lo, hi), true),
                     inv_sqrt);
      heads.push_back(dcg::matmul(dcg::softmax(scores, /*causal=*/true), dcg::slice(v, -1, lo, hi)));
    }
    return out_(heads.size() == 1 ? heads.front() : dcg::concat(heads, -1));
  }

 private:
  std::size_t heads_ = 1;
  std::size_t head_dim_ = 0;
  layers::Linear query_;
  layers::Linear key_;
  layers::Linear value_;
  layers::Linear out_;
};

// Post-norm transformer encoder layer.
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(dcg::ParamRegistry& registry, const std::string& name, std::size_t dim,
               const SeqEncoderConfig& cfg, layers::Rng& rng)
      : attention_(registry, name + ".attn", dim, cfg.heads, rng),
        norm1_(registry, name + ".norm1", dim),
        ff1_(registry, name + ".ff1", dim, cfg.resolved_ff_width(dim), rng),
        ff2_(registry, name + ".ff2", cfg.resolved_ff_width(dim), dim, rng),
        norm2_(registry, name + ".norm2", dim) {}

  dcg::Tensor operator()(const dcg::Tensor& x, layers::Dropout& dropout, bool training) const {
    const dcg::Tensor h = norm1_(x + dropout(attention_(x), training));
    return norm2_(h + dropout(ff2_(dcg::relu(ff1_(h))), training));
  }

 private:
  CausalSelfAttention attention_;
  layers::LayerNorm norm1_;
  layers::Linear ff1_;
  layers::Linear ff2_;
  layers::LayerNorm norm2_;
};

struct EncoderOutput {
  dcg::Tensor user_location;   // [batch, dim]
  dcg::Tensor time_user;       // [batch, dim]
  dcg::Tensor location_time;   // [batch, len, 2 dim]
  dcg::Tensor user_embedding;  // [batch, dim]
};

class TpiEncoder {
 public:
  TpiEncoder(dcg::ParamRegistry& registry, const ModelConfig& cfg, layers::Rng& rng,
             std::uint64_t dropout_seed)
      : cfg_(cfg),
        users_(registry, "embed.user", cfg.num_users, cfg.dim, rng),
        locations_(registry, "embed.location", cfg.num_locations, cfg.dim, rng),
        time_(registry, "embed.time", cfg.slots, cfg.dim, cfg.sigma, rng),
        user_location_(registry, "pair.user_location", cfg.num_topics, cfg.dim, rng),
        time_user_(registry, "pair.time_user", 2 * cfg.dim, cfg.dim, cfg.dim, cfg.attention_heads,
                   cfg.oscillator, cfg.use_cnoa, rng),
        input_proj_(registry, "pair.location_time.input", 2 * cfg.dim, cfg.dim, rng),
        dropout_(cfg.sequence.dropout, dropout_seed) {
    cfg.validate();
    for (std::size_t i = 0; i < cfg.sequence.layers; ++i) {
      layers_.emplace_back(registry, "pair.location_time.layer" + std::to_string(i), cfg.dim,
                           cfg.sequence, rng);
    }
  }

  // Query [user embedding ; smoothed current slot] attends over all smoothed
  // slot rows. Returns [batch, dim].
  dcg::Tensor time_user_pair(std::span<const std::size_t> users,
                             std::span<const std::size_t> current_slots, bool update_state = true) {
    require(users.size() == current_slots.size() && !users.empty(),
            "time_user_pair: users and slots must be non-empty and equally long");
    const dcg::Tensor table = time_.table();
    return time_user_pair(users_.lookup(users), table, current_slots, update_state);
  }

  // Causal transformer over [location ; smoothed slot] tokens projected to
  // dim. Returns [batch, len, 2 dim] = [contextual ; projected input].
  dcg::Tensor location_time_pair(std::span<const std::size_t> locations,
                                 std::span<const std::size_t> slots, std::size_t batch,
                                 bool training) {
    return location_time_pair(locations, slots, batch, time_.table(), training);
  }

  EncoderOutput encode(const Batch& batch, const topics::TopicModel& topic_model, bool training,
                       bool update_state = true) {
    require(batch.size > 0 && batch.context_len > 0, "encode: empty batch");
    for (std::size_t u : batch.users) {
      require(u < cfg_.num_users, "encode: user id out of range");
    }
    for (std::size_t l : batch.locations) {
      require(l < cfg_.num_locations, "encode: location id out of range");
    }
    for (std::size_t s : batch.slots) {
      require(s < cfg_.slots, "encode: slot out of range");
    }
    const dcg::Tensor table = time_.table();
    EncoderOutput out;
    out.user_embedding = users_.lookup(batch.users);
    out.user_location = user_location_(topics::user_topic_batch(topic_model, batch.users));
    out.time_user = time_user_pair(out.user_embedding, table, batch.last_slots, update_state);
    out.location_time =
        location_time_pair(batch.locations, batch.slots, batch.size, table, training);
    return out;
  }

  void reset_state() { time_user_.reset_state(); }
  cnoa::ContextAttention& time_user_attention() { return time_user_; }
  const embeddings::EmbeddingTable& users() const { return users_; }
  const embeddings::EmbeddingTable& locations() const { return locations_; }
  const embeddings::SmoothedTimeEmbedding& time() const { return time_; }
  layers::Dropout& dropout() { return dropout_; }

 private:
  dcg::Tensor time_user_pair(const dcg::Tensor& user_rows, const dcg::Tensor& table,
                             std::span<const std::size_t> current_slots, bool update_state) {
    for (std::size_t s : current_slots) {
      require(s < cfg_.slots, "time_user_pair: slot out of range");
    }
    const std::size_t b = current_slots.size();
    const dcg::Tensor query = dcg::reshape(
        dcg::concat({user_rows, dcg::gather_rows(table, current_slots)}, -1), {b, 1, 2 * cfg_.dim});
    const auto att = time_user_.forward(query, table, table, update_state);
    return dcg::reshape(att.output, {b, cfg_.dim});
  }

  dcg::Tensor location_time_pair(std::span<const std::size_t> locations,
                                 std::span<const std::size_t> slots, std::size_t batch,
                                 const dcg::Tensor& table, bool training) {
    require(batch > 0 && !locations.empty(), "location_time_pair: empty context");
    require(locations.size() == slots.size() && locations.size() % batch == 0,
            "location_time_pair: locations and slots must form equal-length windows");
    const std::size_t len = locations.size() / batch;
    const std::size_t d = cfg_.dim;
    const dcg::Tensor tokens = dcg::reshape(
        dcg::concat({locations_.lookup(locations), dcg::gather_rows(table, slots)}, -1),
        {batch, len, 2 * d});
    const dcg::Tensor projected = input_proj_(tokens);
    const dcg::Tensor pe = dcg::Tensor::constant({len, d}, sinusoidal_encoding(len, d));
    dcg::Tensor h = dropout_(dcg::scale(projected, std::sqrt(static_cast<double>(d))) + pe, training);
    for (const auto& layer : layers_) {
      h = layer(h, dropout_, training);
    }
    return dcg::concat({h, projected}, -1);
  }

  ModelConfig cfg_;
  embeddings::EmbeddingTable users_;
  embeddings::EmbeddingTable locations_;
  embeddings::SmoothedTimeEmbedding time_;
  topics::UserLocationHead user_location_;
  cnoa::ContextAttention time_user_;
  layers::Linear input_proj_;
  std::vector<EncoderLayer> layers_;
  layers::Dropout dropout_;
};

}  // namespace canoe::encoder
