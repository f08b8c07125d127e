#pragma once

// Strict JSON (de)serialization of configuration structs and the topic
// model. Readers reject unknown keys and wrong types; absent keys keep their
// defaults.

#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include "canoe/cnoa.hpp"
#include "canoe/data.hpp"
#include "canoe/decoder.hpp"
#include "canoe/error.hpp"
#include "canoe/model_config.hpp"
#include "canoe/topics.hpp"
#include "json.hpp"

namespace canoe::serial {

using nlohmann::json;

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ContractViolation(path_ + ": expected a JSON object");
    }
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    out = convert<T>(*v, path(key));
  }

  // Rejects keys that no reader asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (used_.count(it.key()) == 0) {
        throw ContractViolation("unknown config key '" + path(it.key()) + "'");
      }
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ContractViolation(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) {
        throw ContractViolation(where + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ContractViolation(where + ": expected an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ContractViolation(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ContractViolation(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!v.is_array()) throw ContractViolation(where + ": expected an array of numbers");
      std::vector<double> out;
      for (const auto& x : v) out.push_back(convert<double>(x, where));
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Oscillator and model
// ---------------------------------------------------------------------------

inline json to_json(const cnoa::OscillatorParams& p) {
  return {{"e1", p.e1},       {"e2", p.e2},       {"i1", p.i1}, {"i2", p.i2},
          {"tau_e", p.tau_e}, {"tau_i", p.tau_i}, {"k", p.k},   {"iterations", p.iterations},
          {"gamma", p.gamma}};
}

inline void from_json(const json& j, const std::string& path, cnoa::OscillatorParams& p) {
  Fields f(j, path);
  f.read("e1", p.e1);
  f.read("e2", p.e2);
  f.read("i1", p.i1);
  f.read("i2", p.i2);
  f.read("tau_e", p.tau_e);
  f.read("tau_i", p.tau_i);
  f.read("k", p.k);
  f.read("iterations", p.iterations);
  f.read("gamma", p.gamma);
  f.finish();
}

inline json to_json(const SeqEncoderConfig& c) {
  return {{"layers", c.layers}, {"heads", c.heads}, {"dropout", c.dropout}, {"ff_width", c.ff_width}};
}

inline void from_json(const json& j, const std::string& path, SeqEncoderConfig& c) {
  Fields f(j, path);
  f.read("layers", c.layers);
  f.read("heads", c.heads);
  f.read("dropout", c.dropout);
  f.read("ff_width", c.ff_width);
  f.finish();
}

// Architecture settings only; vocabulary sizes and the topic count are
// written separately because they come from the data and the topic model.
inline json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"sigma", c.sigma},
          {"attention_heads", c.attention_heads},
          {"use_cnoa", c.use_cnoa},
          {"decoder_query", to_string(c.decoder_query)},
          {"fusion_hidden", c.fusion_hidden},
          {"oscillator", to_json(c.oscillator)},
          {"sequence", to_json(c.sequence)}};
}

inline void from_json(const json& j, const std::string& path, ModelConfig& c) {
  Fields f(j, path);
  f.read("dim", c.dim);
  f.read("sigma", c.sigma);
  f.read("attention_heads", c.attention_heads);
  f.read("use_cnoa", c.use_cnoa);
  if (const json* q = f.find("decoder_query")) {
    c.decoder_query = query_source_from_string(Fields::convert<std::string>(*q, f.path("decoder_query")));
  }
  f.read("fusion_hidden", c.fusion_hidden);
  if (const json* o = f.find("oscillator")) from_json(*o, f.path("oscillator"), c.oscillator);
  if (const json* s = f.find("sequence")) from_json(*s, f.path("sequence"), c.sequence);
  f.finish();
}

inline json to_json(const decoder::LossWeights& w) {
  return {{"location", w.location}, {"time", w.time}, {"aux", w.aux}};
}

inline void from_json(const json& j, const std::string& path, decoder::LossWeights& w) {
  Fields f(j, path);
  f.read("location", w.location);
  f.read("time", w.time);
  f.read("aux", w.aux);
  f.finish();
}

// ---------------------------------------------------------------------------
// Data and topics
// ---------------------------------------------------------------------------

inline json to_json(const data::SyntheticConfig& c) {
  return {{"num_users", c.num_users}, {"num_locations", c.num_locations},
          {"days", c.days},           {"p_explore", c.p_explore},
          {"anchors", c.anchors},     {"theta", c.theta}};
}

inline void from_json(const json& j, const std::string& path, data::SyntheticConfig& c) {
  Fields f(j, path);
  f.read("num_users", c.num_users);
  f.read("num_locations", c.num_locations);
  f.read("days", c.days);
  f.read("p_explore", c.p_explore);
  f.read("anchors", c.anchors);
  f.read("theta", c.theta);
  f.finish();
}

inline json to_json(const data::DataOptions& o) {
  return {{"theta", o.theta},
          {"window_len", o.window_len},
          {"stride", o.stride},
          {"min_records", o.min_records}};
}

inline void from_json(const json& j, const std::string& path, data::DataOptions& o) {
  Fields f(j, path);
  f.read("theta", o.theta);
  f.read("window_len", o.window_len);
  f.read("stride", o.stride);
  f.read("min_records", o.min_records);
  f.finish();
}

inline void validate(const data::DataOptions& o) {
  require(o.theta >= 0, "data.theta must be >= 0");
  require(o.window_len >= 2, "data.window_len must be >= 2");
  require(o.stride >= 1, "data.stride must be >= 1");
}

inline json to_json(const topics::LdaOptions& o) {
  return {{"num_topics", o.num_topics},
          {"alpha", o.alpha},
          {"beta", o.beta},
          {"iterations", o.iterations}};
}

inline void from_json(const json& j, const std::string& path, topics::LdaOptions& o) {
  Fields f(j, path);
  f.read("num_topics", o.num_topics);
  f.read("alpha", o.alpha);
  f.read("beta", o.beta);
  f.read("iterations", o.iterations);
  f.finish();
}

inline void validate(const topics::LdaOptions& o) {
  require(o.num_topics >= 2, "topics.num_topics must be >= 2");
  require(std::isfinite(o.alpha), "topics.alpha must be finite");
  require(o.beta > 0.0 && std::isfinite(o.beta), "topics.beta must be > 0");
}

inline json to_json(const topics::TopicModel& m) {
  return {{"num_topics", m.num_topics}, {"num_users", m.num_users},
          {"num_locations", m.num_locations}, {"alpha", m.alpha},
          {"beta", m.beta},             {"iterations", m.iterations},
          {"seed", m.seed},             {"theta", m.theta},
          {"phi", m.phi}};
}

inline topics::TopicModel topic_model_from_json(const json& j) {
  topics::TopicModel m;
  Fields f(j, "topic_model");
  f.read("num_topics", m.num_topics);
  f.read("num_users", m.num_users);
  f.read("num_locations", m.num_locations);
  f.read("alpha", m.alpha);
  f.read("beta", m.beta);
  f.read("iterations", m.iterations);
  f.read("seed", m.seed);
  f.read("theta", m.theta);
  f.read("phi", m.phi);
  f.finish();
  require(m.theta.size() == m.num_users * m.num_topics, "topic_model.theta has the wrong size");
  require(m.phi.size() == m.num_topics * m.num_locations, "topic_model.phi has the wrong size");
  return m;
}

}  // namespace canoe::serial
