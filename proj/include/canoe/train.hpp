#pragma once

// Training loop with a staged loss schedule, validation-based model
// selection, evaluation helpers and JSON checkpoints.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "canoe/batch.hpp"
#include "canoe/data.hpp"
#include "canoe/decoder.hpp"
#include "canoe/error.hpp"
#include "canoe/eval.hpp"
#include "canoe/layers.hpp"
#include "canoe/model.hpp"
#include "canoe/optim.hpp"
#include "canoe/serialize.hpp"
#include "canoe/topics.hpp"
#include "json.hpp"

namespace canoe::train {

using nlohmann::json;

inline constexpr const char* kCheckpointFormat = "canoe-checkpoint/1";

// Independent 64-bit seed for one named stream of a run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream,
                    0xca70e5u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

enum SeedStream : std::uint32_t { kTopicSeed = 1, kInitSeed = 2, kShuffleSeed = 3 };

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 0.005;
  double weight_decay = 0.01;
  std::size_t warmup_epochs = 5;  // epochs trained on the time-user loss only
  double clip_norm = 5.0;         // <= 0 disables clipping
  decoder::LossWeights weights;
  std::uint64_t seed = 0;

  void validate() const {
    require(epochs >= 1, "train.epochs must be >= 1");
    require(batch_size >= 1, "train.batch_size must be >= 1");
    require(lr > 0.0 && std::isfinite(lr), "train.lr must be > 0");
    require(weight_decay >= 0.0 && std::isfinite(weight_decay), "train.weight_decay must be >= 0");
    require(std::isfinite(clip_norm), "train.clip_norm must be finite");
    weights.validate();
    require(warmup_epochs == 0 || weights.time > 0.0,
            "train.warmup_epochs > 0 needs train.loss_weights.time > 0");
  }
};

inline json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"warmup_epochs", c.warmup_epochs},
          {"clip_norm", c.clip_norm},
          {"loss_weights", serial::to_json(c.weights)}};
}

inline void from_json(const json& j, const std::string& path, TrainConfig& c) {
  serial::Fields f(j, path);
  f.read("epochs", c.epochs);
  f.read("batch_size", c.batch_size);
  f.read("lr", c.lr);
  f.read("weight_decay", c.weight_decay);
  f.read("warmup_epochs", c.warmup_epochs);
  f.read("clip_norm", c.clip_norm);
  if (const json* w = f.find("loss_weights")) serial::from_json(*w, f.path("loss_weights"), c.weights);
  f.finish();
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

struct Phase {
  std::string name;
  std::size_t begin = 0;  // first epoch (0-based)
  std::size_t end = 0;    // one past the last epoch
  decoder::LossWeights weights;
};

inline std::vector<Phase> staged_schedule(const TrainConfig& cfg) {
  std::vector<Phase> phases;
  const std::size_t warmup = std::min(cfg.warmup_epochs, cfg.epochs);
  if (warmup > 0) {
    phases.push_back({"time_warmup", 0, warmup, {0.0, cfg.weights.time, 0.0}});
  }
  if (warmup < cfg.epochs) {
    phases.push_back({"joint", warmup, cfg.epochs, cfg.weights});
  }
  return phases;
}

inline const Phase& phase_for_epoch(const std::vector<Phase>& phases, std::size_t epoch) {
  for (const auto& p : phases) {
    if (epoch >= p.begin && epoch < p.end) return p;
  }
  throw ContractViolation("phase_for_epoch: epoch " + std::to_string(epoch) + " outside the schedule");
}

// ---------------------------------------------------------------------------
// Log
// ---------------------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  std::string phase;
  double loss_total = 0.0;
  double loss_loc = 0.0;
  double loss_time = 0.0;
  double loss_aux = 0.0;
  std::optional<double> val_acc1;
  std::optional<double> val_mrr;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

inline void write_log_csv(std::ostream& os, std::span<const EpochLog> log) {
  os << "epoch,loss_total,loss_loc,loss_time,loss_aux,val_acc1,val_mrr\n";
  os << std::setprecision(17);
  for (const auto& e : log) {
    os << e.epoch << ',' << e.loss_total << ',' << e.loss_loc << ',' << e.loss_time << ','
       << e.loss_aux << ',';
    if (e.val_acc1) os << *e.val_acc1;
    os << ',';
    if (e.val_mrr) os << *e.val_mrr;
    os << '\n';
  }
}

inline json to_json(const EpochLog& e) {
  json j{{"epoch", e.epoch},       {"phase", e.phase},         {"loss_total", e.loss_total},
         {"loss_loc", e.loss_loc}, {"loss_time", e.loss_time}, {"loss_aux", e.loss_aux}};
  j["val_acc1"] = e.val_acc1 ? json(*e.val_acc1) : json(nullptr);
  j["val_mrr"] = e.val_mrr ? json(*e.val_mrr) : json(nullptr);
  return j;
}

inline EpochLog epoch_log_from_json(const json& j) {
  EpochLog e;
  serial::Fields f(j, "log");
  f.read("epoch", e.epoch);
  f.read("phase", e.phase);
  f.read("loss_total", e.loss_total);
  f.read("loss_loc", e.loss_loc);
  f.read("loss_time", e.loss_time);
  f.read("loss_aux", e.loss_aux);
  for (auto [key, slot] : {std::pair{"val_acc1", &e.val_acc1}, std::pair{"val_mrr", &e.val_mrr}}) {
    if (const json* v = f.find(key); v != nullptr && !v->is_null()) {
      *slot = serial::Fields::convert<double>(*v, f.path(key));
    }
  }
  f.finish();
  return e;
}

// ---------------------------------------------------------------------------
// Topics and model assembly
// ---------------------------------------------------------------------------

// User-location counts over the records covered by training windows.
inline topics::CoOccurrenceMatrix training_cooccurrence(const data::PreparedData& prepared) {
  topics::CoOccurrenceMatrix counts(prepared.num_users, prepared.num_locations);
  for (std::size_t u = 0; u < prepared.num_users; ++u) {
    const auto& seq = prepared.sequences[u];
    for (std::size_t i = 0; i < prepared.train_records[u]; ++i) {
      ++counts.at(u, seq.locations[i]);
    }
  }
  return counts;
}

inline topics::TopicModel fit_topics(const data::PreparedData& prepared, const topics::LdaOptions& options) {
  return topics::fit_lda(training_cooccurrence(prepared), options);
}

inline ModelConfig model_config_for(ModelConfig arch, const data::PreparedData& prepared,
                                    std::size_t num_topics) {
  arch.num_users = prepared.num_users;
  arch.num_locations = prepared.num_locations;
  arch.slots = data::kSlotsPerDay;
  arch.num_topics = num_topics;
  return arch;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// 1-indexed rank of every sample's target, in sample order. Attention state
// starts from uniform and is carried across batches.
inline std::vector<std::size_t> evaluate_ranks(CanoeModel& model,
                                               std::span<const data::WindowSample> samples,
                                               std::size_t batch_size) {
  require(batch_size >= 1, "evaluate_ranks: batch_size must be >= 1");
  model.reset_attention_state();
  const std::size_t num_locations = model.config().num_locations;
  std::vector<std::size_t> ranks;
  ranks.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const auto chunk = samples.subspan(start, std::min(batch_size, samples.size() - start));
    const std::vector<double> probs = model.location_probabilities(make_batch(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      ranks.push_back(eval::rank_of_target(
          std::span<const double>(probs).subspan(i * num_locations, num_locations),
          chunk[i].target_location));
    }
  }
  return ranks;
}

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

using ParamValues = std::vector<std::vector<double>>;

inline ParamValues snapshot(const dcg::ParamRegistry& registry) {
  ParamValues out;
  for (const auto& [name, t] : registry) {
    out.emplace_back(t.values().begin(), t.values().end());
  }
  return out;
}

inline void load_values(const dcg::ParamRegistry& registry, const ParamValues& values) {
  require(values.size() == registry.size(), "load_values: parameter count mismatch");
  std::size_t i = 0;
  for (const auto& [name, t] : registry) {
    require(values[i].size() == t.size(), "load_values: size mismatch for '" + name + "'");
    std::copy(values[i].begin(), values[i].end(), t.mutable_values().begin());
    ++i;
  }
}

struct TrainState {
  optim::OptimizerState optimizer;
  layers::Rng shuffle_rng;
  std::size_t epochs_done = 0;
  std::vector<EpochLog> log;
  double best_val_mrr = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  ParamValues best_params;
};

inline TrainState initial_state(const CanoeModel& model, const TrainConfig& cfg) {
  TrainState s;
  s.optimizer = optim::make_state(model.registry(), cfg.lr, cfg.weight_decay);
  s.shuffle_rng.seed(derive_seed(cfg.seed, kShuffleSeed));
  return s;
}

struct TrainHooks {
  std::function<void(const Phase&)> on_phase;  // at the first epoch of every phase
  std::function<void(const EpochLog&)> on_epoch;
};

// Trains from state.epochs_done up to cfg.epochs. The model ends holding the
// latest parameters; state.best_params holds the best validation snapshot.
inline void train(CanoeModel& model, const data::DatasetSplits& splits, const TrainConfig& cfg,
                  TrainState& state, const TrainHooks& hooks = {}) {
  cfg.validate();
  require(!splits.train.empty(), "train: the training split is empty");
  const auto phases = staged_schedule(cfg);
  const dcg::ParamRegistry& registry = model.registry();
  state.optimizer.lr = cfg.lr;
  state.optimizer.weight_decay = cfg.weight_decay;

  std::vector<std::size_t> order(splits.train.size());
  std::vector<data::WindowSample> chunk;
  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    const Phase& phase = phase_for_epoch(phases, epoch);
    if (epoch == phase.begin && hooks.on_phase) hooks.on_phase(phase);

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.shuffle_rng);
    model.reset_attention_state();

    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.phase = phase.name;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      chunk.clear();
      for (std::size_t i = start; i < end; ++i) chunk.push_back(splits.train[order[i]]);
      const Batch batch = make_batch(chunk);

      registry.zero_grad();
      decoder::LossTerms terms;
      try {
        terms = model.loss(batch, phase.weights, true, true);
        if (!std::isfinite(terms.total.item())) {
          throw NumericFault("loss is not finite");
        }
        dcg::backward(terms.total);
      } catch (const NumericFault& e) {
        throw NumericFault("training aborted at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch_index) + ": " + e.what());
      }
      if (cfg.clip_norm > 0.0) optim::clip_grad_norm(registry, cfg.clip_norm);
      optim::adamw_update(registry, state.optimizer);
#ifndef NDEBUG
      for (const auto& [name, t] : registry) {
        require(dcg::all_finite(t.values()), "train: parameter '" + name + "' became non-finite");
      }
#endif
      const auto n = static_cast<double>(chunk.size());
      entry.loss_total += terms.total.item() * n;
      entry.loss_loc += terms.location * n;
      entry.loss_time += terms.time * n;
      entry.loss_aux += terms.aux * n;
    }
    const auto total = static_cast<double>(order.size());
    entry.loss_total /= total;
    entry.loss_loc /= total;
    entry.loss_time /= total;
    entry.loss_aux /= total;

    if (!splits.val.empty()) {
      const auto report = eval::compute_metrics(evaluate_ranks(model, splits.val, cfg.batch_size));
      entry.val_acc1 = report.acc1;
      entry.val_mrr = report.mrr;
    }
    // Without a validation split the latest epoch is always kept.
    const double score = entry.val_mrr.value_or(std::numeric_limits<double>::infinity());
    if (score > state.best_val_mrr || !entry.val_mrr) {
      state.best_val_mrr = score;
      state.best_epoch = entry.epoch;
      state.best_params = snapshot(registry);
    }
    state.log.push_back(entry);
    state.epochs_done = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(entry);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline json params_to_json(const dcg::ParamRegistry& registry, const ParamValues& values) {
  require(values.size() == registry.size(), "params_to_json: parameter count mismatch");
  json out = json::array();
  std::size_t i = 0;
  for (const auto& [name, t] : registry) {
    out.push_back({{"name", name}, {"shape", t.shape()}, {"values", values[i]}});
    ++i;
  }
  return out;
}

inline ParamValues params_from_json(const json& j, const dcg::ParamRegistry& registry) {
  require(j.is_array() && j.size() == registry.size(), "checkpoint: parameter list does not match the model");
  ParamValues out;
  std::size_t i = 0;
  for (const auto& [name, t] : registry) {
    const json& e = j[i];
    require(e.is_object() && e.value("name", "") == name,
            "checkpoint: expected parameter '" + name + "' at position " + std::to_string(i));
    require(e.at("shape").get<dcg::Shape>() == t.shape(), "checkpoint: shape mismatch for '" + name + "'");
    out.push_back(serial::Fields::convert<std::vector<double>>(e.at("values"), "checkpoint." + name));
    require(out.back().size() == t.size(), "checkpoint: size mismatch for '" + name + "'");
    ++i;
  }
  return out;
}

template <class Engine>
std::string engine_to_string(const Engine& e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

template <class Engine>
void engine_from_string(const std::string& s, Engine& e) {
  std::istringstream is(s);
  is >> e;
  require(!is.fail(), "checkpoint: corrupt random engine state");
}

inline json model_config_to_json(const ModelConfig& c) {
  json j = serial::to_json(c);
  j["num_users"] = c.num_users;
  j["num_locations"] = c.num_locations;
  j["slots"] = c.slots;
  j["num_topics"] = c.num_topics;
  return j;
}

inline ModelConfig model_config_from_json(const json& j) {
  json arch = j;
  ModelConfig c;
  for (auto [key, slot] : {std::pair{"num_users", &c.num_users}, std::pair{"num_locations", &c.num_locations},
                           std::pair{"slots", &c.slots}, std::pair{"num_topics", &c.num_topics}}) {
    require(arch.contains(key), std::string("checkpoint: model config lacks '") + key + "'");
    *slot = serial::Fields::convert<std::size_t>(arch.at(key), std::string("model.") + key);
    arch.erase(key);
  }
  serial::from_json(arch, "model", c);
  c.validate();
  return c;
}

// Best-validation parameters for evaluation plus a resume block with the
// latest parameters, optimizer moments and random engine states.
inline json make_checkpoint(CanoeModel& model, const TrainConfig& cfg, std::uint64_t init_seed,
                            const TrainState& state) {
  const auto latest = snapshot(model.registry());
  json j;
  j["format"] = kCheckpointFormat;
  j["model"] = model_config_to_json(model.config());
  j["train"] = to_json(cfg);
  j["seed"] = cfg.seed;
  j["init_seed"] = init_seed;
  j["epoch"] = state.epochs_done;
  j["best_epoch"] = state.best_epoch;
  j["params"] = params_to_json(model.registry(), state.best_params.empty() ? latest : state.best_params);
  j["topic_model"] = serial::to_json(model.topic_model());
  json log = json::array();
  for (const auto& e : state.log) log.push_back(to_json(e));
  j["resume"] = {{"params", params_to_json(model.registry(), latest)},
                 {"adam_step", state.optimizer.step},
                 {"adam_first_moment", state.optimizer.first_moment},
                 {"adam_second_moment", state.optimizer.second_moment},
                 {"shuffle_rng", engine_to_string(state.shuffle_rng)},
                 {"dropout_rng", engine_to_string(model.dropout().rng())},
                 {"best_val_mrr", std::isfinite(state.best_val_mrr) ? json(state.best_val_mrr)
                                                                    : json(nullptr)},
                 {"log", log}};
  return j;
}

inline void check_format(const json& j) {
  require(j.is_object() && j.value("format", "") == kCheckpointFormat,
          std::string("checkpoint: expected format '") + kCheckpointFormat + "'");
}

// Model with the checkpoint's best parameters loaded.
inline std::unique_ptr<CanoeModel> restore_model(const json& j) {
  check_format(j);
  const ModelConfig cfg = model_config_from_json(j.at("model"));
  auto model = std::make_unique<CanoeModel>(cfg, serial::topic_model_from_json(j.at("topic_model")),
                                            j.at("init_seed").get<std::uint64_t>());
  load_values(model->registry(), params_from_json(j.at("params"), model->registry()));
  return model;
}

inline TrainConfig train_config_from_checkpoint(const json& j) {
  check_format(j);
  TrainConfig cfg;
  from_json(j.at("train"), "train", cfg);
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

// Puts the latest parameters and dropout engine back into `model` and
// rebuilds the training state.
inline TrainState restore_state(const json& j, CanoeModel& model) {
  check_format(j);
  const json& r = j.at("resume");
  TrainState s;
  s.epochs_done = j.at("epoch").get<std::size_t>();
  s.best_epoch = j.at("best_epoch").get<std::size_t>();
  load_values(model.registry(), params_from_json(r.at("params"), model.registry()));
  s.best_params = params_from_json(j.at("params"), model.registry());
  s.optimizer = optim::make_state(model.registry(), 0.0, 0.0);
  s.optimizer.step = r.at("adam_step").get<std::size_t>();
  s.optimizer.first_moment = r.at("adam_first_moment").get<ParamValues>();
  s.optimizer.second_moment = r.at("adam_second_moment").get<ParamValues>();
  engine_from_string(r.at("shuffle_rng").get<std::string>(), s.shuffle_rng);
  engine_from_string(r.at("dropout_rng").get<std::string>(), model.dropout().rng());
  s.best_val_mrr = r.at("best_val_mrr").is_null() ? -std::numeric_limits<double>::infinity()
                                                  : r.at("best_val_mrr").get<double>();
  for (const auto& e : r.at("log")) s.log.push_back(epoch_log_from_json(e));
  return s;
}

}  // namespace canoe::train
