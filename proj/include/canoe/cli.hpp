#pragma once

// Command-line front end: one binary, one subcommand per pipeline stage.
// Exit codes: 0 success, 1 check failure or runtime fault, 2 usage or
// configuration error.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "canoe/config.hpp"
#include "canoe/data.hpp"
#include "canoe/diagnostics.hpp"
#include "canoe/eval.hpp"
#include "canoe/mmc.hpp"
#include "canoe/train.hpp"
#include "json.hpp"

namespace canoe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

// Thrown for failed checks that should exit with code 1.
class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::shared_ptr<spdlog::logger> logger() {
  static auto log = [] {
    auto l = spdlog::stderr_color_mt("canoe");
    l->set_pattern("[%H:%M:%S] [%l] %v");
    return l;
  }();
  return log;
}

inline void configure_logging() {
  const char* env = std::getenv("CANOE_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    logger()->set_level(spdlog::level::err);
  } else if (level == "warn") {
    logger()->set_level(spdlog::level::warn);
  } else if (level == "debug") {
    logger()->set_level(spdlog::level::debug);
  } else if (level == "info") {
    logger()->set_level(spdlog::level::info);
  } else {
    throw ContractViolation("CANOE_LOG must be one of error, warn, info, debug");
  }
}

// ---------------------------------------------------------------------------
// File helpers
// ---------------------------------------------------------------------------

inline fs::path directory_of(const std::string& path) {
  const fs::path dir = fs::path(path).parent_path();
  return dir.empty() ? fs::path(".") : dir;
}

inline std::ofstream open_output(const fs::path& path) {
  fs::create_directories(directory_of(path.string()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractViolation("cannot write '" + path.string() + "'");
  return out;
}

inline void write_json(const fs::path& path, const json& j) {
  auto out = open_output(path);
  out << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractViolation("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ContractViolation("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline std::vector<data::CheckIn> read_checkins(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractViolation("cannot open data file '" + path + "'");
  return data::read_jsonl(in);
}

inline void echo_config(const fs::path& dir, const std::string& command, const config::RunConfig& cfg) {
  write_json(dir / (command + "_config.json"), config::to_json(cfg));
}

// Report prefix: "<dir>/name" or "<dir>/name.json" both give "<dir>/name".
inline fs::path report_stem(const std::string& report) {
  fs::path p(report);
  if (p.extension() == ".json") p.replace_extension();
  return p;
}

inline void write_stratified(const fs::path& stem, const eval::StratifiedReport& rep, std::ostream& out) {
  write_json(fs::path(stem.string() + ".json"), eval::to_json(rep));
  {
    auto csv = open_output(fs::path(stem.string() + ".csv"));
    eval::write_csv(csv, rep);
  }
  {
    auto txt = open_output(fs::path(stem.string() + ".txt"));
    eval::write_text(txt, rep);
  }
  eval::write_text(out, rep);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  std::string model;
  std::string model_out;
  std::string log;
  std::string report;
  std::string thresholds;
  std::string resume;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<double> p_explore;
  std::optional<std::size_t> dim;
  std::optional<bool> use_cnoa;
};

inline config::RunConfig resolve_config(const Options& o) {
  config::RunConfig cfg = o.config_path.empty() ? config::RunConfig{} : config::load(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.lr) cfg.train.lr = *o.lr;
  if (o.p_explore) cfg.synthetic.p_explore = *o.p_explore;
  if (o.dim) cfg.model.dim = *o.dim;
  if (o.use_cnoa) cfg.model.use_cnoa = *o.use_cnoa;
  if (!o.thresholds.empty()) cfg.eval.thresholds = eval::parse_thresholds(o.thresholds);
  cfg.propagate_seed();
  cfg.validate();
  return cfg;
}

inline int cmd_generate(const Options& o, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto checkins = data::generate_synthetic(cfg.synthetic);
  {
    auto file = open_output(o.out);
    data::write_jsonl(file, checkins);
  }
  const auto manifest = data::make_manifest(checkins);
  write_json(o.out + ".manifest.json", data::to_json(manifest));
  echo_config(directory_of(o.out), "generate", cfg);
  logger()->info("generated {} check-ins for {} users", manifest.checkins, manifest.users);
  out << data::to_json(manifest).dump() << "\n";
  return kExitOk;
}

inline int cmd_preprocess(const Options& o, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto prepared = data::prepare(read_checkins(o.data), cfg.data);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  {
    auto file = open_output(dir / "sequences.jsonl");
    for (const auto& seq : prepared.sequences) {
      if (seq.size() == 0) continue;
      file << json{{"user", seq.user},
                   {"locations", seq.locations},
                   {"slots", seq.slots},
                   {"timestamps", seq.timestamps},
                   {"train_records", prepared.train_records[seq.user]}}
                  .dump()
           << "\n";
    }
  }
  const json summary{{"num_users", prepared.num_users},
                     {"num_locations", prepared.num_locations},
                     {"train", prepared.splits.train.size()},
                     {"val", prepared.splits.val.size()},
                     {"test", prepared.splits.test.size()}};
  write_json(dir / "splits.json", summary);
  echo_config(dir, "preprocess", cfg);
  out << summary.dump() << "\n";
  return kExitOk;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  auto cfg = resolve_config(o);
  const auto prepared = data::prepare(read_checkins(o.data), cfg.data);
  const fs::path model_path(o.model_out);
  const fs::path log_path = o.log.empty() ? fs::path(o.model_out + ".log.csv") : fs::path(o.log);

  std::unique_ptr<CanoeModel> model;
  train::TrainState state;
  std::uint64_t init_seed = cfg.init_seed();
  if (!o.resume.empty()) {
    const json ckpt = read_json_file(o.resume);
    model = train::restore_model(ckpt);
    state = train::restore_state(ckpt, *model);
    init_seed = ckpt.at("init_seed").get<std::uint64_t>();
    require(model->config().num_users == prepared.num_users &&
                model->config().num_locations == prepared.num_locations,
            "resume: checkpoint does not match the data file");
    logger()->info("resuming after epoch {}", state.epochs_done);
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    model = config::build_model(prepared, cfg);
    logger()->info("topic model fitted in {:.2f}s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    state = train::initial_state(*model, cfg.train);
  }
  echo_config(directory_of(o.model_out), "train", cfg);

  train::TrainHooks hooks;
  hooks.on_phase = [](const train::Phase& p) {
    logger()->info("phase '{}' starts at epoch {}", p.name, p.begin + 1);
  };
  hooks.on_epoch = [](const train::EpochLog& e) {
    logger()->info("epoch {} loss {:.5f} (loc {:.5f} time {:.5f} aux {:.5f}) val acc@1 {:.4f} mrr {:.4f}",
                   e.epoch, e.loss_total, e.loss_loc, e.loss_time, e.loss_aux, e.val_acc1.value_or(0.0),
                   e.val_mrr.value_or(0.0));
  };
  train::train(*model, prepared.splits, cfg.train, state, hooks);

  json ckpt = train::make_checkpoint(*model, cfg.train, init_seed, state);
  ckpt["data"] = serial::to_json(cfg.data);
  {
    auto file = open_output(model_path);
    file << ckpt.dump() << "\n";
  }
  {
    auto file = open_output(log_path);
    train::write_log_csv(file, state.log);
  }
  logger()->info("best validation epoch {}", state.best_epoch);
  out << json{{"epochs", state.epochs_done}, {"best_epoch", state.best_epoch}}.dump() << "\n";
  return kExitOk;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  auto cfg = resolve_config(o);
  const json ckpt = read_json_file(o.model);
  if (ckpt.contains("data") && o.config_path.empty()) {
    serial::from_json(ckpt.at("data"), "data", cfg.data);
  }
  auto model = train::restore_model(ckpt);
  const auto prepared = data::prepare(read_checkins(o.data), cfg.data);
  require(prepared.num_users <= model->config().num_users &&
              prepared.num_locations <= model->config().num_locations,
          "eval: data file contains users or locations unknown to the model");
  require(!prepared.splits.test.empty(), "eval: the test split is empty");
  const auto ranks = train::evaluate_ranks(*model, prepared.splits.test, cfg.eval.batch_size);
  const auto entropies = eval::sample_entropies(prepared, prepared.splits.test);
  const auto rep = eval::entropy_stratified_eval(ranks, entropies, cfg.eval.thresholds);
  echo_config(directory_of(report_stem(o.report).string()), "eval", cfg);
  write_stratified(report_stem(o.report), rep, out);
  return kExitOk;
}

inline int cmd_mmc(const Options& o, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto prepared = data::prepare(read_checkins(o.data), cfg.data);
  require(!prepared.splits.test.empty(), "mmc: the test split is empty");
  const auto model = mmc::fit_mmc(mmc::training_prefixes(prepared), prepared.num_locations);
  const auto ranks = mmc::rank_samples(model, prepared.splits.test);
  const auto entropies = eval::sample_entropies(prepared, prepared.splits.test);
  const auto rep = eval::entropy_stratified_eval(ranks, entropies, cfg.eval.thresholds);
  echo_config(directory_of(report_stem(o.report).string()), "mmc", cfg);
  write_stratified(report_stem(o.report), rep, out);
  return kExitOk;
}

// Per-sample prefix entropy of the test split plus subset sizes per
// threshold.
inline int cmd_entropy(const Options& o, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto prepared = data::prepare(read_checkins(o.data), cfg.data);
  const auto& test = prepared.splits.test;
  const auto entropies = eval::sample_entropies(prepared, test);
  const fs::path stem = report_stem(o.report);
  {
    auto csv = open_output(fs::path(stem.string() + ".csv"));
    csv << "user,target_index,entropy\n" << std::setprecision(17);
    for (std::size_t i = 0; i < test.size(); ++i) {
      csv << test[i].user << ',' << test[i].target_index << ',' << entropies[i] << "\n";
    }
  }
  json summary{{"n_samples", test.size()}, {"thresholds", json::array()}};
  for (double t : cfg.eval.thresholds) {
    std::size_t high = 0;
    for (double h : entropies) high += h >= t ? 1 : 0;
    summary["thresholds"].push_back({{"threshold", t}, {"n_high", high}, {"n_low", test.size() - high}});
  }
  write_json(fs::path(stem.string() + ".json"), summary);
  echo_config(directory_of(stem.string()), "entropy", cfg);
  out << summary.dump() << "\n";
  return kExitOk;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto report = diagnostics::model_grad_check(config::gradcheck_setup(cfg));
  out << std::setprecision(6) << report.max_relative_error << "\n";
  for (const auto& e : report.entries) {
    logger()->debug("{}: {:.3e}", e.name, e.max_relative_error);
  }
  if (!(report.max_relative_error < cfg.gradcheck.tolerance)) {
    throw CheckFailed("gradient check failed: max relative error " +
                      std::to_string(report.max_relative_error) + " >= " +
                      std::to_string(cfg.gradcheck.tolerance));
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"CANOE next-location prediction"};
  app.require_subcommand(1);
  Options o;

  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Run configuration (JSON)");
  };
  const auto add_thresholds = [&](CLI::App* sub) {
    sub->add_option("--thresholds", o.thresholds, "Comma-separated entropy thresholds in [0, 1]");
  };

  auto* generate = app.add_subcommand("generate", "Generate a synthetic check-in dataset");
  add_config(generate);
  generate->add_option("--out", o.out, "Output JSONL path")->required();
  generate->add_option("--seed", o.seed, "Random seed")->required();
  generate->add_option("--p-explore", o.p_explore, "Exploration probability");

  auto* preprocess = app.add_subcommand("preprocess", "Extract activity sequences and splits");
  add_config(preprocess);
  preprocess->add_option("--data", o.data, "Check-in JSONL")->required();
  preprocess->add_option("--out", o.out, "Output directory")->required();

  auto* trainer = app.add_subcommand("train", "Train a model");
  add_config(trainer);
  trainer->add_option("--data", o.data, "Check-in JSONL")->required();
  trainer->add_option("--model-out", o.model_out, "Checkpoint path")->required();
  trainer->add_option("--seed", o.seed, "Random seed")->required();
  trainer->add_option("--log", o.log, "Per-epoch CSV log (default: <model-out>.log.csv)");
  trainer->add_option("--resume", o.resume, "Checkpoint to continue from");
  trainer->add_option("--epochs", o.epochs, "Total epochs");
  trainer->add_option("--batch-size", o.batch_size, "Batch size");
  trainer->add_option("--lr", o.lr, "Learning rate");
  trainer->add_option("--dim", o.dim, "Embedding dimension");
  trainer->add_option("--use-cnoa", o.use_cnoa, "Oscillatory attention (false selects cross-attention)");

  auto* evaluate = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_config(evaluate);
  add_thresholds(evaluate);
  evaluate->add_option("--data", o.data, "Check-in JSONL")->required();
  evaluate->add_option("--model", o.model, "Checkpoint path")->required();
  evaluate->add_option("--report", o.report, "Report path prefix")->required();

  auto* baseline = app.add_subcommand("mmc", "Evaluate the first-order Markov baseline");
  add_config(baseline);
  add_thresholds(baseline);
  baseline->add_option("--data", o.data, "Check-in JSONL")->required();
  baseline->add_option("--report", o.report, "Report path prefix")->required();

  auto* entropy = app.add_subcommand("entropy", "Prefix-entropy distribution of the test split");
  add_config(entropy);
  add_thresholds(entropy);
  entropy->add_option("--data", o.data, "Check-in JSONL")->required();
  entropy->add_option("--report", o.report, "Report path prefix")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check on a tiny model");
  add_config(gradcheck);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    configure_logging();
    if (generate->parsed()) return cmd_generate(o, out);
    if (preprocess->parsed()) return cmd_preprocess(o, out);
    if (trainer->parsed()) return cmd_train(o, out);
    if (evaluate->parsed()) return cmd_eval(o, out);
    if (baseline->parsed()) return cmd_mmc(o, out);
    if (entropy->parsed()) return cmd_entropy(o, out);
    if (gradcheck->parsed()) return cmd_gradcheck(o, out);
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckFailed& e) {
    err << "check failed: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    err << "fatal: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace canoe::cli
