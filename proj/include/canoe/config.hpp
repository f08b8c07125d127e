#pragma once

// Run configuration shared by every command: one JSON document with
// sections per module, strict keys and fully materialized defaults.

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "canoe/data.hpp"
#include "canoe/diagnostics.hpp"
#include "canoe/error.hpp"
#include "canoe/model.hpp"
#include "canoe/serialize.hpp"
#include "canoe/topics.hpp"
#include "canoe/train.hpp"
#include "json.hpp"

namespace canoe::config {

using nlohmann::json;

struct EvalSettings {
  std::vector<double> thresholds{0.75, 0.80, 0.85, 0.90};
  std::size_t batch_size = 256;
};

struct GradCheckSettings {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  data::SyntheticConfig synthetic;
  data::DataOptions data;
  topics::LdaOptions topics;
  ModelConfig model;
  train::TrainConfig train;
  EvalSettings eval;
  GradCheckSettings gradcheck;

  // Copies the run seed into the sections that carry one.
  void propagate_seed() {
    synthetic.seed = seed;
    train.seed = seed;
    topics.seed = train::derive_seed(seed, train::kTopicSeed);
  }

  std::uint64_t init_seed() const { return train::derive_seed(seed, train::kInitSeed); }

  void validate() const {
    synthetic.validate();
    serial::validate(data);
    serial::validate(topics);
    // Vocabulary sizes come from the data; validate the rest with placeholders.
    ModelConfig probe = model;
    probe.num_users = 1;
    probe.num_locations = 1;
    probe.num_topics = topics.num_topics;
    probe.validate();
    train.validate();
    require(!eval.thresholds.empty(), "eval.thresholds must not be empty");
    for (double t : eval.thresholds) {
      require(t >= 0.0 && t <= 1.0, "eval.thresholds must lie in [0, 1]");
    }
    require(eval.batch_size >= 1, "eval.batch_size must be >= 1");
    require(gradcheck.epsilon > 0.0, "gradcheck.epsilon must be > 0");
    require(gradcheck.tolerance > 0.0, "gradcheck.tolerance must be > 0");
  }
};

inline json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"synthetic", serial::to_json(c.synthetic)},
          {"data", serial::to_json(c.data)},
          {"topics", serial::to_json(c.topics)},
          {"model", serial::to_json(c.model)},
          {"train", train::to_json(c.train)},
          {"eval", {{"thresholds", c.eval.thresholds}, {"batch_size", c.eval.batch_size}}},
          {"gradcheck",
           {{"epsilon", c.gradcheck.epsilon},
            {"tolerance", c.gradcheck.tolerance},
            {"seed", c.gradcheck.seed}}}};
}

inline RunConfig from_json(const json& j) {
  RunConfig c;
  serial::Fields f(j, "");
  f.read("seed", c.seed);
  if (const json* v = f.find("synthetic")) serial::from_json(*v, "synthetic", c.synthetic);
  if (const json* v = f.find("data")) serial::from_json(*v, "data", c.data);
  if (const json* v = f.find("topics")) serial::from_json(*v, "topics", c.topics);
  if (const json* v = f.find("model")) serial::from_json(*v, "model", c.model);
  if (const json* v = f.find("train")) train::from_json(*v, "train", c.train);
  if (const json* v = f.find("eval")) {
    serial::Fields e(*v, "eval");
    e.read("thresholds", c.eval.thresholds);
    e.read("batch_size", c.eval.batch_size);
    e.finish();
  }
  if (const json* v = f.find("gradcheck")) {
    serial::Fields g(*v, "gradcheck");
    g.read("epsilon", c.gradcheck.epsilon);
    g.read("tolerance", c.gradcheck.tolerance);
    g.read("seed", c.gradcheck.seed);
    g.finish();
  }
  f.finish();
  c.propagate_seed();
  return c;
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractViolation("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ContractViolation("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

struct TrainedRun {
  std::unique_ptr<CanoeModel> model;  // holds the best-validation parameters
  train::TrainState state;
};

inline std::unique_ptr<CanoeModel> build_model(const data::PreparedData& prepared, const RunConfig& cfg) {
  const ModelConfig mc = train::model_config_for(cfg.model, prepared, cfg.topics.num_topics);
  return std::make_unique<CanoeModel>(mc, train::fit_topics(prepared, cfg.topics), cfg.init_seed());
}

// Topic fitting, model construction and training from scratch.
inline TrainedRun run_training(const data::PreparedData& prepared, const RunConfig& cfg,
                               const train::TrainHooks& hooks = {}) {
  TrainedRun run;
  run.model = build_model(prepared, cfg);
  run.state = train::initial_state(*run.model, cfg.train);
  train::train(*run.model, prepared.splits, cfg.train, run.state, hooks);
  train::load_values(run.model->registry(), run.state.best_params);
  return run;
}

// Tiny gradient-check setup with the run's oscillator and loss settings.
inline diagnostics::GradCheckSetup gradcheck_setup(const RunConfig& cfg) {
  auto s = diagnostics::tiny_setup();
  s.epsilon = cfg.gradcheck.epsilon;
  s.seed = cfg.gradcheck.seed;
  s.weights = cfg.train.weights;
  s.model.use_cnoa = cfg.model.use_cnoa;
  s.model.decoder_query = cfg.model.decoder_query;
  s.model.oscillator.gamma = cfg.model.oscillator.gamma;
  return s;
}

}  // namespace canoe::config
