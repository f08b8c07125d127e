#pragma once

// First-order mobility Markov chain over activity-location transitions, with
// per-user rows, a global fallback row and a popularity fallback.

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "canoe/data.hpp"
#include "canoe/error.hpp"

namespace canoe::mmc {

using Row = std::map<std::size_t, std::size_t>;  // next location -> count

struct TransitionModel {
  std::size_t num_locations = 0;
  std::map<std::pair<std::size_t, std::size_t>, Row> user_rows;  // (user, from) -> row
  std::map<std::size_t, Row> global_rows;                        // from -> row
  std::vector<std::size_t> popularity;                           // arrivals per location

  const Row* user_row(std::size_t user, std::size_t from) const {
    auto it = user_rows.find({user, from});
    return it == user_rows.end() ? nullptr : &it->second;
  }
  const Row* global_row(std::size_t from) const {
    auto it = global_rows.find(from);
    return it == global_rows.end() ? nullptr : &it->second;
  }
};

inline std::size_t row_total(const Row& row) {
  std::size_t total = 0;
  for (const auto& [loc, c] : row) {
    total += c;
  }
  return total;
}

inline double row_probability(const Row& row, std::size_t to) {
  const std::size_t total = row_total(row);
  auto it = row.find(to);
  return it == row.end() || total == 0 ? 0.0
                                       : static_cast<double>(it->second) / static_cast<double>(total);
}

// Counts every consecutive pair inside each sequence, per user and globally.
inline TransitionModel fit_mmc(std::span<const data::ActivitySequence> sequences,
                               std::size_t num_locations) {
  TransitionModel m;
  m.num_locations = num_locations;
  m.popularity.assign(num_locations, 0);
  std::size_t pairs = 0;
  for (const auto& seq : sequences) {
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      const std::size_t from = seq.locations[i];
      const std::size_t to = seq.locations[i + 1];
      require(from < num_locations && to < num_locations, "fit_mmc: location id out of range");
      ++m.user_rows[{seq.user, from}][to];
      ++m.global_rows[from][to];
      ++m.popularity[to];
      ++pairs;
    }
  }
  require(pairs > 0, "fit_mmc: training sequences contain no transitions");
  return m;
}

// Training prefixes of every kept user (the records covered by training
// windows), which is what the baseline is fitted on.
inline std::vector<data::ActivitySequence> training_prefixes(const data::PreparedData& prepared) {
  std::vector<data::ActivitySequence> out;
  for (std::size_t u = 0; u < prepared.sequences.size(); ++u) {
    const std::size_t n = prepared.train_records[u];
    if (n == 0) {
      continue;
    }
    const auto& seq = prepared.sequences[u];
    data::ActivitySequence prefix;
    prefix.user = seq.user;
    prefix.locations.assign(seq.locations.begin(), seq.locations.begin() + static_cast<std::ptrdiff_t>(n));
    prefix.slots.assign(seq.slots.begin(), seq.slots.begin() + static_cast<std::ptrdiff_t>(n));
    prefix.timestamps.assign(seq.timestamps.begin(),
                             seq.timestamps.begin() + static_cast<std::ptrdiff_t>(n));
    out.push_back(std::move(prefix));
  }
  return out;
}

// Every location exactly once. Primary key: the user's row from `current`,
// else the global row, else popularity. Secondary key: the global row (or
// popularity when it is empty). Remaining ties: ascending id.
inline std::vector<std::size_t> rank_locations(const TransitionModel& m, std::size_t user,
                                               std::size_t current) {
  const Row* urow = m.user_row(user, current);
  const Row* grow = m.global_row(current);
  std::size_t pop_total = 0;
  for (std::size_t c : m.popularity) {
    pop_total += c;
  }
  const std::size_t u_total = urow ? row_total(*urow) : 0;
  const std::size_t g_total = grow ? row_total(*grow) : 0;
  const auto share = [](const Row& row, std::size_t total, std::size_t l) {
    auto it = row.find(l);
    return it == row.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total);
  };
  const auto popularity = [&](std::size_t l) {
    return pop_total == 0 ? 0.0
                          : static_cast<double>(m.popularity[l]) / static_cast<double>(pop_total);
  };
  const auto global = [&](std::size_t l) { return grow ? share(*grow, g_total, l) : popularity(l); };
  const auto primary = [&](std::size_t l) { return urow ? share(*urow, u_total, l) : global(l); };

  std::vector<std::pair<std::pair<double, double>, std::size_t>> keyed;
  keyed.reserve(m.num_locations);
  for (std::size_t l = 0; l < m.num_locations; ++l) {
    keyed.push_back({{primary(l), urow ? global(l) : popularity(l)}, l});
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    if (a.first.first != b.first.first) return a.first.first > b.first.first;
    if (a.first.second != b.first.second) return a.first.second > b.first.second;
    return a.second < b.second;
  });
  std::vector<std::size_t> order;
  order.reserve(keyed.size());
  for (const auto& k : keyed) {
    order.push_back(k.second);
  }
  return order;
}

// 1-indexed rank of each sample's target, querying from its last context
// location.
inline std::vector<std::size_t> rank_samples(const TransitionModel& m,
                                             std::span<const data::WindowSample> samples) {
  std::vector<std::size_t> ranks;
  ranks.reserve(samples.size());
  for (const auto& s : samples) {
    require(!s.context_locations.empty(), "mmc: empty context");
    require(s.target_location < m.num_locations, "mmc: target location out of range");
    const auto order = rank_locations(m, s.user, s.context_locations.back());
    const auto it = std::find(order.begin(), order.end(), s.target_location);
    ranks.push_back(static_cast<std::size_t>(it - order.begin()) + 1);
  }
  return ranks;
}

}  // namespace canoe::mmc
