#pragma once

// Cross-context decoder: a single query token attends over the ordered token
// list [user ; time-user ; location-time rows], and the attended summary is
// fused with the pair features by an MLP. Location, time and auxiliary heads
// plus the weighted three-term loss live here as well.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "canoe/cnoa.hpp"
#include "canoe/dcg.hpp"
#include "canoe/encoder.hpp"
#include "canoe/layers.hpp"
#include "canoe/model_config.hpp"

namespace canoe::decoder {

struct DecoderOutput {
  dcg::Tensor features;         // [batch, 6 dim], the pre-MLP concatenation
  dcg::Tensor fused;            // [batch, dim]
  dcg::Tensor location_logits;  // [batch, locations]
  dcg::Tensor time_logits;      // [batch, slots]
  dcg::Tensor aux_logits;       // [batch, locations]
};

class CrossContextDecoder {
 public:
  CrossContextDecoder(dcg::ParamRegistry& registry, const ModelConfig& cfg, layers::Rng& rng)
      : dim_(cfg.dim),
        query_source_(cfg.decoder_query),
        query_proj_(registry, "decoder.query", cfg.dim, cfg.dim, rng, false),
        user_proj_(registry, "decoder.token.user", cfg.dim, cfg.dim, rng, false),
        time_proj_(registry, "decoder.token.time_user", cfg.dim, cfg.dim, rng, false),
        seq_proj_(registry, "decoder.token.location_time", 2 * cfg.dim, cfg.dim, rng, false),
        attention_(registry, "decoder.attention", cfg.dim, cfg.dim, cfg.dim, cfg.attention_heads,
                   cfg.oscillator, cfg.use_cnoa, rng),
        fusion_(registry, "decoder.fusion", 6 * cfg.dim, cfg.resolved_fusion_hidden(), cfg.dim, rng),
        location_head_(registry, "head.location", cfg.dim, cfg.num_locations, rng),
        time_head_(registry, "head.time", cfg.dim, cfg.slots, rng),
        aux_head_(registry, "head.aux", 6 * cfg.dim, cfg.num_locations, rng) {}

  DecoderOutput decode(const encoder::EncoderOutput& enc, bool update_state = true) {
    const std::size_t b = enc.user_location.dim(0);
    const std::size_t len = enc.location_time.dim(1);
    const dcg::Tensor& query_in =
        query_source_ == QuerySource::user_location ? enc.user_location : enc.time_user;
    const dcg::Tensor query = dcg::reshape(query_proj_(query_in), {b, 1, dim_});
    const dcg::Tensor tokens = dcg::concat(
        {dcg::reshape(user_proj_(enc.user_embedding), {b, 1, dim_}),
         dcg::reshape(time_proj_(enc.time_user), {b, 1, dim_}), seq_proj_(enc.location_time)},
        1);
    const auto att = attention_.forward(query, tokens, tokens, update_state);
    const dcg::Tensor attended = dcg::reshape(att.output, {b, dim_});
    const dcg::Tensor last_step =
        dcg::reshape(dcg::slice(enc.location_time, 1, len - 1, len), {b, 2 * dim_});

    DecoderOutput out;
    out.features = dcg::concat(
        {enc.user_location, last_step, enc.time_user, enc.user_embedding, attended}, -1);
    out.fused = fusion_(out.features);
    out.location_logits = location_head_(out.fused);
    out.time_logits = time_head_(enc.time_user);
    out.aux_logits = aux_head_(out.features);
    return out;
  }

  void reset_state() { attention_.reset_state(); }
  cnoa::ContextAttention& attention() { return attention_; }
  const layers::Linear& location_head() const { return location_head_; }
  const layers::Linear& time_head() const { return time_head_; }
  const layers::Linear& aux_head() const { return aux_head_; }

 private:
  std::size_t dim_ = 0;
  QuerySource query_source_ = QuerySource::user_location;
  layers::Linear query_proj_;
  layers::Linear user_proj_;
  layers::Linear time_proj_;
  layers::Linear seq_proj_;
  cnoa::ContextAttention attention_;
  layers::Mlp2 fusion_;
  layers::Linear location_head_;
  layers::Linear time_head_;
  layers::Linear aux_head_;
};

struct LossWeights {
  double location = 1.0;
  double time = 0.5;
  double aux = 0.5;

  void validate() const {
    require(location >= 0.0 && time >= 0.0 && aux >= 0.0, "loss weights must be >= 0");
    require(location > 0.0 || time > 0.0 || aux > 0.0, "at least one loss weight must be > 0");
  }
};

struct LossTerms {
  dcg::Tensor total;
  double location = 0.0;  // unweighted mean cross-entropies
  double time = 0.0;
  double aux = 0.0;
};

// Weighted sum of the three mean cross-entropies. Inactive terms are still
// evaluated and enter with weight 0, so their heads receive exact zero
// gradients.
inline LossTerms total_loss(const DecoderOutput& out, std::span<const std::size_t> target_locations,
                            std::span<const std::size_t> target_slots, const LossWeights& w) {
  w.validate();
  require(!target_locations.empty(), "total_loss: empty batch");
  const dcg::Tensor loc = dcg::cross_entropy(out.location_logits, target_locations);
  const dcg::Tensor time = dcg::cross_entropy(out.time_logits, target_slots);
  const dcg::Tensor aux = dcg::cross_entropy(out.aux_logits, target_locations);
  LossTerms terms;
  terms.location = loc.item();
  terms.time = time.item();
  terms.aux = aux.item();
  terms.total = dcg::scale(loc, w.location) + dcg::scale(time, w.time) + dcg::scale(aux, w.aux);
  return terms;
}

}  // namespace canoe::decoder
