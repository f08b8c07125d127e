#pragma once

// Check-in streams, dwell-filtered activity sequences, sliding windows,
// per-user chronological splits, and a seeded returner/explorer generator.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "canoe/error.hpp"
#include "json.hpp"

namespace canoe::data {

inline constexpr std::size_t kSlotsPerDay = 24;
inline constexpr std::int64_t kSecondsPerHour = 3600;
inline constexpr std::int64_t kSecondsPerDay = 86400;

struct CheckIn {
  std::uint64_t user = 0;
  std::uint64_t loc = 0;
  std::int64_t t = 0;

  friend bool operator==(const CheckIn&, const CheckIn&) = default;
};

// floor(t / 3600) mod 24, also for negative timestamps.
inline std::size_t hour_slot(std::int64_t t) {
  std::int64_t hours = t / kSecondsPerHour;
  if (t % kSecondsPerHour != 0 && t < 0) {
    --hours;
  }
  const std::int64_t slot = ((hours % 24) + 24) % 24;
  return static_cast<std::size_t>(slot);
}

struct ActivitySequence {
  std::size_t user = 0;
  std::vector<std::size_t> locations;
  std::vector<std::size_t> slots;
  std::vector<std::int64_t> timestamps;

  std::size_t size() const { return locations.size(); }
};

// Collapses consecutive check-ins at the same location into runs and keeps a
// run iff its last timestamp minus its first is at least theta seconds. A
// kept run is stamped with its first timestamp.
inline ActivitySequence extract_activity_sequence(std::span<const CheckIn> checkins,
                                                  std::int64_t theta) {
  ActivitySequence seq;
  if (checkins.empty()) {
    return seq;
  }
  seq.user = checkins.front().user;
  for (std::size_t i = 1; i < checkins.size(); ++i) {
    require(checkins[i].t >= checkins[i - 1].t,
            "extract_activity_sequence: check-ins are not sorted by time");
    require(checkins[i].user == seq.user, "extract_activity_sequence: mixed users");
  }
  std::size_t run_start = 0;
  for (std::size_t i = 1; i <= checkins.size(); ++i) {
    if (i == checkins.size() || checkins[i].loc != checkins[run_start].loc) {
      const std::int64_t dwell = checkins[i - 1].t - checkins[run_start].t;
      if (dwell >= theta) {
        seq.locations.push_back(static_cast<std::size_t>(checkins[run_start].loc));
        seq.slots.push_back(hour_slot(checkins[run_start].t));
        seq.timestamps.push_back(checkins[run_start].t);
      }
      run_start = i;
    }
  }
  return seq;
}

struct WindowSample {
  std::size_t user = 0;
  std::vector<std::size_t> context_locations;
  std::vector<std::size_t> context_slots;
  std::size_t target_location = 0;
  std::size_t target_slot = 0;
  std::size_t target_index = 0;  // position of the target in the user's sequence

  friend bool operator==(const WindowSample&, const WindowSample&) = default;
};

// Each run of window_len consecutive records gives window_len - 1 context
// records and the following record as target.
inline std::vector<WindowSample> make_windows(const ActivitySequence& seq,
                                              std::size_t window_len = 20,
                                              std::size_t stride = 1) {
  require(window_len >= 2, "make_windows: window length must be >= 2");
  require(stride >= 1, "make_windows: stride must be >= 1");
  std::vector<WindowSample> out;
  for (std::size_t start = 0; start + window_len <= seq.size(); start += stride) {
    WindowSample w;
    w.user = seq.user;
    const std::size_t last = start + window_len - 1;
    w.context_locations.assign(seq.locations.begin() + static_cast<std::ptrdiff_t>(start),
                               seq.locations.begin() + static_cast<std::ptrdiff_t>(last));
    w.context_slots.assign(seq.slots.begin() + static_cast<std::ptrdiff_t>(start),
                           seq.slots.begin() + static_cast<std::ptrdiff_t>(last));
    w.target_location = seq.locations[last];
    w.target_slot = seq.slots[last];
    w.target_index = last;
    out.push_back(std::move(w));
  }
  return out;
}

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// 7:1:2 with floors for train and validation; the remainder goes to test.
inline SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.train = (n * 7) / 10;
  c.val = n / 10;
  c.test = n - c.train - c.val;
  return c;
}

struct DatasetSplits {
  std::vector<WindowSample> train;
  std::vector<WindowSample> val;
  std::vector<WindowSample> test;
};

// Per-user chronological partition; users are processed in the given order.
inline DatasetSplits split(const std::vector<std::vector<WindowSample>>& per_user) {
  DatasetSplits out;
  for (const auto& samples : per_user) {
    const SplitCounts c = split_counts(samples.size());
    auto it = samples.begin();
    out.train.insert(out.train.end(), it, it + static_cast<std::ptrdiff_t>(c.train));
    it += static_cast<std::ptrdiff_t>(c.train);
    out.val.insert(out.val.end(), it, it + static_cast<std::ptrdiff_t>(c.val));
    it += static_cast<std::ptrdiff_t>(c.val);
    out.test.insert(out.test.end(), it, samples.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic returner / explorer trajectories
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  std::size_t num_users = 200;
  std::size_t num_locations = 50;
  std::size_t days = 30;
  double p_explore = 0.0;
  std::size_t anchors = 4;  // anchor locations (= scheduled activities) per user per day
  std::int64_t theta = 3600;
  std::uint64_t seed = 0;

  void validate() const {
    require(num_users >= 1, "synthetic.num_users must be >= 1");
    require(days >= 1, "synthetic.days must be >= 1");
    require(p_explore >= 0.0 && p_explore <= 1.0, "synthetic.p_explore must lie in [0, 1]");
    require(anchors >= 1 && anchors <= kSlotsPerDay / 2, "synthetic.anchors must lie in [1, 12]");
    require(num_locations >= anchors + 1,
            "synthetic.num_locations must exceed synthetic.anchors by at least one");
    require(theta >= 1 && theta <= 3 * kSecondsPerHour / 2, "synthetic.theta must lie in [1, 5400]");
  }
};

namespace detail {

inline std::mt19937_64 user_stream(std::uint64_t seed, std::uint64_t user) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(user), static_cast<std::uint32_t>(user >> 32),
                    0x5eedu};
  return std::mt19937_64(seq);
}

}  // namespace detail

// Every user gets `anchors` distinct anchor locations, each tied to a fixed
// start hour (even hours, so activities never overlap). Every day each
// scheduled activity visits its anchor, or with probability p_explore a
// uniformly drawn non-anchor location instead. Each visit produces an arrival
// and a departure check-in at least theta seconds apart, inside the start
// hour's slot.
inline std::vector<CheckIn> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::vector<CheckIn> out;
  out.reserve(cfg.num_users * cfg.days * cfg.anchors * 2);
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    auto rng = detail::user_stream(cfg.seed, u);

    std::vector<std::size_t> locations(cfg.num_locations);
    for (std::size_t l = 0; l < cfg.num_locations; ++l) {
      locations[l] = l;
    }
    std::shuffle(locations.begin(), locations.end(), rng);
    const std::vector<std::size_t> anchor_locs(locations.begin(),
                                               locations.begin() + static_cast<std::ptrdiff_t>(cfg.anchors));
    const std::vector<std::size_t> others(locations.begin() + static_cast<std::ptrdiff_t>(cfg.anchors),
                                          locations.end());

    std::vector<std::size_t> hours;
    for (std::size_t h = 0; h < kSlotsPerDay; h += 2) {
      hours.push_back(h);
    }
    std::shuffle(hours.begin(), hours.end(), rng);
    hours.resize(cfg.anchors);
    std::sort(hours.begin(), hours.end());

    std::bernoulli_distribution explore(cfg.p_explore);
    std::uniform_int_distribution<std::size_t> pick_other(0, others.size() - 1);
    std::uniform_int_distribution<std::int64_t> arrival_offset(0, 1500);
    std::uniform_int_distribution<std::int64_t> extra_dwell(0, 1800);

    for (std::size_t day = 0; day < cfg.days; ++day) {
      for (std::size_t a = 0; a < cfg.anchors; ++a) {
        std::size_t loc = anchor_locs[a];
        if (explore(rng)) {
          loc = others[pick_other(rng)];
        }
        const std::int64_t arrive = static_cast<std::int64_t>(day) * kSecondsPerDay +
                                    static_cast<std::int64_t>(hours[a]) * kSecondsPerHour +
                                    arrival_offset(rng);
        const std::int64_t leave = arrive + cfg.theta + extra_dwell(rng);
        out.push_back({u, loc, arrive});
        out.push_back({u, loc, leave});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON Lines dataset files
// ---------------------------------------------------------------------------

inline void write_jsonl(std::ostream& os, std::span<const CheckIn> checkins) {
  for (const auto& c : checkins) {
    os << "{\"user\":" << c.user << ",\"loc\":" << c.loc << ",\"t\":" << c.t << "}\n";
  }
}

// Parses one record per non-empty line; exactly the keys user, loc and t are
// accepted. Throws ContractViolation naming the offending line.
inline std::vector<CheckIn> read_jsonl(std::istream& is) {
  std::vector<CheckIn> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const auto fail = [&](const std::string& why) {
      throw ContractViolation("dataset line " + std::to_string(line_no) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(e.what());
    }
    if (!j.is_object() || j.size() != 3 || !j.contains("user") || !j.contains("loc") ||
        !j.contains("t")) {
      fail("expected exactly the keys user, loc, t");
    }
    if (!j["user"].is_number_unsigned() || !j["loc"].is_number_unsigned()) {
      fail("user and loc must be unsigned integers");
    }
    if (!j["t"].is_number_integer()) {
      fail("t must be an integer");
    }
    out.push_back({j["user"].get<std::uint64_t>(), j["loc"].get<std::uint64_t>(),
                   j["t"].get<std::int64_t>()});
  }
  return out;
}

struct DatasetManifest {
  std::size_t users = 0;
  std::size_t checkins = 0;
  std::size_t locations = 0;
  std::size_t duration_days = 0;
};

inline DatasetManifest make_manifest(std::span<const CheckIn> checkins) {
  DatasetManifest m;
  m.checkins = checkins.size();
  if (checkins.empty()) {
    return m;
  }
  std::set<std::uint64_t> users;
  std::set<std::uint64_t> locs;
  std::int64_t lo = checkins.front().t;
  std::int64_t hi = checkins.front().t;
  for (const auto& c : checkins) {
    users.insert(c.user);
    locs.insert(c.loc);
    lo = std::min(lo, c.t);
    hi = std::max(hi, c.t);
  }
  m.users = users.size();
  m.locations = locs.size();
  m.duration_days = static_cast<std::size_t>((hi - lo + kSecondsPerDay - 1) / kSecondsPerDay);
  if (m.duration_days == 0) {
    m.duration_days = 1;
  }
  return m;
}

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"users", m.users},
          {"checkins", m.checkins},
          {"locations", m.locations},
          {"duration_days", m.duration_days}};
}

// ---------------------------------------------------------------------------
// Full preprocessing pipeline
// ---------------------------------------------------------------------------

struct DataOptions {
  std::int64_t theta = 3600;
  std::size_t window_len = 20;
  std::size_t stride = 1;
  std::size_t min_records = 100;
};

struct PreparedData {
  std::size_t num_users = 0;      // max user id + 1
  std::size_t num_locations = 0;  // max location id + 1
  std::vector<ActivitySequence> sequences;  // indexed by user id; dropped users are empty
  std::vector<std::size_t> train_records;   // per user: records covered by training windows
  DatasetSplits splits;
};

inline PreparedData prepare(std::vector<CheckIn> checkins, const DataOptions& options) {
  require(!checkins.empty(), "prepare: dataset has no check-ins");
  std::stable_sort(checkins.begin(), checkins.end(), [](const CheckIn& a, const CheckIn& b) {
    return a.user != b.user ? a.user < b.user : a.t < b.t;
  });
  PreparedData out;
  for (const auto& c : checkins) {
    out.num_users = std::max<std::size_t>(out.num_users, c.user + 1);
    out.num_locations = std::max<std::size_t>(out.num_locations, c.loc + 1);
  }
  out.sequences.resize(out.num_users);
  out.train_records.assign(out.num_users, 0);

  std::vector<std::vector<WindowSample>> per_user;
  std::size_t begin = 0;
  while (begin < checkins.size()) {
    std::size_t end = begin;
    while (end < checkins.size() && checkins[end].user == checkins[begin].user) {
      ++end;
    }
    const std::span<const CheckIn> user_checkins(checkins.data() + begin, end - begin);
    ActivitySequence seq = extract_activity_sequence(user_checkins, options.theta);
    const auto user = static_cast<std::size_t>(checkins[begin].user);
    if (seq.size() >= options.min_records) {
      auto windows = make_windows(seq, options.window_len, options.stride);
      const SplitCounts counts = split_counts(windows.size());
      if (counts.train > 0) {
        out.train_records[user] = windows[counts.train - 1].target_index + 1;
      }
      per_user.push_back(std::move(windows));
      out.sequences[user] = std::move(seq);
    }
    begin = end;
  }
  out.splits = split(per_user);
  return out;
}

}  // namespace canoe::data
