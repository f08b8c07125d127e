#pragma once

#include <cstddef>
#include <string>

#include "canoe/cnoa.hpp"
#include "canoe/error.hpp"

namespace canoe {

struct SeqEncoderConfig {
  std::size_t layers = 3;
  std::size_t heads = 2;
  double dropout = 0.1;
  std::size_t ff_width = 0;  // 0 selects 4 * dim

  std::size_t resolved_ff_width(std::size_t dim) const { return ff_width > 0 ? ff_width : 4 * dim; }

  void validate(std::size_t dim) const {
    require(layers >= 1, "sequence_encoder.layers must be >= 1");
    require(heads >= 1 && dim % heads == 0, "sequence_encoder.heads must divide dim");
    require(dropout >= 0.0 && dropout < 1.0, "sequence_encoder.dropout must lie in [0, 1)");
  }
};

// Which encoder output drives the decoder query.
enum class QuerySource { user_location, time_user };

inline std::string to_string(QuerySource q) {
  return q == QuerySource::user_location ? "user_location" : "time_user";
}

inline QuerySource query_source_from_string(const std::string& s) {
  if (s == "user_location") return QuerySource::user_location;
  if (s == "time_user") return QuerySource::time_user;
  throw ContractViolation("decoder_query must be 'user_location' or 'time_user', got '" + s + "'");
}

struct ModelConfig {
  std::size_t num_users = 0;
  std::size_t num_locations = 0;
  std::size_t slots = 24;
  std::size_t dim = 16;
  double sigma = 1.0;
  std::size_t num_topics = 450;
  std::size_t attention_heads = 2;
  cnoa::OscillatorParams oscillator;
  bool use_cnoa = true;
  QuerySource decoder_query = QuerySource::user_location;
  std::size_t fusion_hidden = 0;  // 0 selects 4 * dim
  SeqEncoderConfig sequence;

  std::size_t resolved_fusion_hidden() const { return fusion_hidden > 0 ? fusion_hidden : 4 * dim; }

  void validate() const {
    require(num_users >= 1, "model: num_users must be >= 1");
    require(num_locations >= 1, "model: num_locations must be >= 1");
    require(slots >= 1, "model.slots must be >= 1");
    require(dim >= 1, "model.dim must be >= 1");
    require(sigma > 0.0, "model.sigma must be > 0");
    require(num_topics >= 2, "topics.num_topics must be >= 2");
    require(attention_heads >= 1 && dim % attention_heads == 0,
            "model.attention_heads must divide model.dim");
    oscillator.validate();
    sequence.validate(dim);
  }
};

}  // namespace canoe
