#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "canoe/batch.hpp"
#include "canoe/decoder.hpp"
#include "canoe/encoder.hpp"
#include "canoe/layers.hpp"
#include "canoe/model_config.hpp"
#include "canoe/topics.hpp"

namespace canoe {

struct ForwardResult {
  encoder::EncoderOutput encoded;
  decoder::DecoderOutput decoded;
};

// Full predictor: all learnable tensors live in one registry, initialized in
// a fixed order from `seed`. The topic model is a frozen input.
class CanoeModel {
 public:
  CanoeModel(const ModelConfig& cfg, topics::TopicModel topic_model, std::uint64_t seed)
      : cfg_((cfg.validate(), cfg)),
        topic_model_(std::move(topic_model)),
        init_rng_(seed),
        encoder_(registry_, cfg_, init_rng_, seed ^ 0x9e3779b97f4a7c15ULL),
        decoder_(registry_, cfg_, init_rng_) {
    require(topic_model_.num_topics == cfg_.num_topics,
            "CanoeModel: topic model and config disagree on the topic count");
    require(topic_model_.num_users >= cfg_.num_users,
            "CanoeModel: topic model does not cover every user");
  }

  CanoeModel(const CanoeModel&) = delete;
  CanoeModel& operator=(const CanoeModel&) = delete;

  ForwardResult forward(const Batch& batch, bool training, bool update_state = true) {
    ForwardResult r;
    r.encoded = encoder_.encode(batch, topic_model_, training, update_state);
    r.decoded = decoder_.decode(r.encoded, update_state);
    return r;
  }

  decoder::LossTerms loss(const Batch& batch, const decoder::LossWeights& weights, bool training,
                          bool update_state = true) {
    const ForwardResult r = forward(batch, training, update_state);
    return decoder::total_loss(r.decoded, batch.target_locations, batch.target_slots, weights);
  }

  // Row-major [batch x locations] location probabilities in evaluation mode.
  std::vector<double> location_probabilities(const Batch& batch, bool update_state = true) {
    const ForwardResult r = forward(batch, false, update_state);
    const dcg::Tensor p = dcg::softmax(r.decoded.location_logits);
    return {p.values().begin(), p.values().end()};
  }

  void reset_attention_state() {
    encoder_.reset_state();
    decoder_.reset_state();
  }

  const ModelConfig& config() const { return cfg_; }
  const topics::TopicModel& topic_model() const { return topic_model_; }
  dcg::ParamRegistry& registry() { return registry_; }
  const dcg::ParamRegistry& registry() const { return registry_; }
  encoder::TpiEncoder& encoder() { return encoder_; }
  decoder::CrossContextDecoder& decoder() { return decoder_; }
  layers::Dropout& dropout() { return encoder_.dropout(); }

 private:
  ModelConfig cfg_;
  topics::TopicModel topic_model_;
  layers::Rng init_rng_;
  dcg::ParamRegistry registry_;
  encoder::TpiEncoder encoder_;
  decoder::CrossContextDecoder decoder_;
};

}  // namespace canoe
