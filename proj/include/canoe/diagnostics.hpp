#pragma once

// Finite-difference check of the complete training loss on a tiny, fully
// seeded configuration.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "canoe/batch.hpp"
#include "canoe/data.hpp"
#include "canoe/model.hpp"
#include "canoe/optim.hpp"
#include "canoe/topics.hpp"

namespace canoe::diagnostics {

struct GradCheckSetup {
  ModelConfig model;
  decoder::LossWeights weights;
  std::size_t window_len = 5;
  std::size_t samples = 6;
  double epsilon = 1e-5;
  std::uint64_t seed = 1;
};

inline GradCheckSetup tiny_setup() {
  GradCheckSetup s;
  s.model.num_users = 3;
  s.model.num_locations = 12;
  s.model.slots = 24;
  s.model.dim = 8;
  s.model.num_topics = 4;
  s.model.attention_heads = 2;
  s.model.oscillator.iterations = 1;
  s.model.sequence.heads = 2;
  s.model.sequence.dropout = 0.0;
  return s;
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::vector<optim::GradCheckEntry> entries;
  std::size_t parameters = 0;
};

// Random windows over the tiny vocabulary, drawn from `seed`.
inline std::vector<data::WindowSample> random_windows(const GradCheckSetup& s) {
  std::mt19937_64 rng(s.seed);
  std::uniform_int_distribution<std::size_t> user(0, s.model.num_users - 1);
  std::uniform_int_distribution<std::size_t> loc(0, s.model.num_locations - 1);
  std::uniform_int_distribution<std::size_t> slot(0, s.model.slots - 1);
  std::vector<data::WindowSample> out(s.samples);
  for (auto& w : out) {
    w.user = user(rng);
    for (std::size_t i = 0; i + 1 < s.window_len; ++i) {
      w.context_locations.push_back(loc(rng));
      w.context_slots.push_back(slot(rng));
    }
    w.target_location = loc(rng);
    w.target_slot = slot(rng);
    w.target_index = s.window_len - 1;
  }
  return out;
}

inline GradCheckReport model_grad_check(const GradCheckSetup& s) {
  const auto windows = random_windows(s);
  topics::CoOccurrenceMatrix counts(s.model.num_users, s.model.num_locations);
  for (const auto& w : windows) {
    for (std::size_t l : w.context_locations) {
      ++counts.at(w.user, l);
    }
  }
  topics::LdaOptions lda;
  lda.num_topics = s.model.num_topics;
  lda.iterations = 20;
  lda.seed = s.seed;
  CanoeModel model(s.model, topics::fit_lda(counts, lda), s.seed);
  const Batch batch = make_batch(windows);

  // One pass populates the previous-attention state, which stays frozen.
  model.forward(batch, false, true);
  auto loss = [&] { return model.loss(batch, s.weights, false, false).total; };

  GradCheckReport report;
  report.entries = optim::grad_check_detailed(loss, model.registry(), s.epsilon);
  report.parameters = model.registry().total_elements();
  for (const auto& e : report.entries) {
    report.max_relative_error = std::max(report.max_relative_error, e.max_relative_error);
  }
  return report;
}

}  // namespace canoe::diagnostics
