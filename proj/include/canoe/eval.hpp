#pragma once

// Ranking metrics and the prefix-entropy stratified evaluation protocol.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "canoe/data.hpp"
#include "canoe/error.hpp"
#include "json.hpp"

namespace canoe::eval {

inline constexpr std::size_t kCutoffs[] = {1, 3, 5, 10};

struct EvalReport {
  std::size_t n_samples = 0;
  double acc1 = 0.0;
  double acc3 = 0.0;
  double acc5 = 0.0;
  double acc10 = 0.0;
  double mrr = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline EvalReport compute_metrics(std::span<const std::size_t> ranks) {
  require(!ranks.empty(), "compute_metrics: empty rank list");
  std::size_t hits[4] = {0, 0, 0, 0};
  double reciprocal = 0.0;
  for (std::size_t r : ranks) {
    require(r >= 1, "compute_metrics: ranks are 1-indexed");
    for (std::size_t i = 0; i < 4; ++i) {
      hits[i] += r <= kCutoffs[i] ? 1 : 0;
    }
    reciprocal += 1.0 / static_cast<double>(r);
  }
  const auto n = static_cast<double>(ranks.size());
  EvalReport rep;
  rep.n_samples = ranks.size();
  rep.acc1 = static_cast<double>(hits[0]) / n;
  rep.acc3 = static_cast<double>(hits[1]) / n;
  rep.acc5 = static_cast<double>(hits[2]) / n;
  rep.acc10 = static_cast<double>(hits[3]) / n;
  rep.mrr = reciprocal / n;
  return rep;
}

// Position of `target` when candidates are sorted by descending probability
// with ties ordered by ascending id; 1-indexed.
inline std::size_t rank_of_target(std::span<const double> probs, std::size_t target) {
  require(target < probs.size(), "rank_of_target: target out of range");
  const double pt = probs[target];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] > pt || (probs[j] == pt && j < target)) {
      ++rank;
    }
  }
  return rank;
}

// Normalized Shannon entropy of the empirical location distribution over a
// non-empty prefix; 0 when only one distinct location occurs.
inline double prefix_entropy(std::span<const std::size_t> prefix) {
  require(!prefix.empty(), "prefix_entropy: prefix must contain at least one element");
  std::map<std::size_t, std::size_t> freq;
  for (std::size_t l : prefix) {
    ++freq[l];
  }
  if (freq.size() == 1) {
    return 0.0;
  }
  const auto n = static_cast<double>(prefix.size());
  double h = 0.0;
  for (const auto& [loc, c] : freq) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  const double normalized = h / std::log(static_cast<double>(freq.size()));
  return std::clamp(normalized, 0.0, 1.0);
}

// Entropy of the sequence prefix that precedes each sample's target.
inline std::vector<double> sample_entropies(const data::PreparedData& prepared,
                                            std::span<const data::WindowSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    require(s.user < prepared.sequences.size(), "sample_entropies: unknown user");
    const auto& seq = prepared.sequences[s.user];
    require(s.target_index >= 1 && s.target_index <= seq.size(),
            "sample_entropies: target index outside the user's sequence");
    out.push_back(prefix_entropy(std::span<const std::size_t>(seq.locations).first(s.target_index)));
  }
  return out;
}

struct ThresholdReport {
  double threshold = 0.0;
  std::size_t n_high = 0;  // samples with entropy >= threshold
  std::size_t n_low = 0;
  std::optional<EvalReport> high;
  std::optional<EvalReport> low;
};

struct StratifiedReport {
  EvalReport overall;
  std::vector<ThresholdReport> thresholds;
};

inline StratifiedReport entropy_stratified_eval(std::span<const std::size_t> ranks,
                                                std::span<const double> entropies,
                                                std::span<const double> thresholds) {
  require(ranks.size() == entropies.size(), "entropy_stratified_eval: one entropy per rank");
  StratifiedReport rep;
  rep.overall = compute_metrics(ranks);
  for (double theta : thresholds) {
    std::vector<std::size_t> high;
    std::vector<std::size_t> low;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      (entropies[i] >= theta ? high : low).push_back(ranks[i]);
    }
    ThresholdReport t;
    t.threshold = theta;
    t.n_high = high.size();
    t.n_low = low.size();
    if (!high.empty()) t.high = compute_metrics(high);
    if (!low.empty()) t.low = compute_metrics(low);
    rep.thresholds.push_back(t);
  }
  return rep;
}

inline std::vector<double> parse_thresholds(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ContractViolation("thresholds: cannot parse '" + item + "'");
    }
    if (used != item.size() || !(v >= 0.0 && v <= 1.0)) {
      throw ContractViolation("thresholds: '" + item + "' is not a number in [0, 1]");
    }
    out.push_back(v);
  }
  require(!out.empty(), "thresholds: empty list");
  return out;
}

// ---------------------------------------------------------------------------
// Report writers
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"n_samples", r.n_samples}, {"acc@1", r.acc1},   {"acc@3", r.acc3},
          {"acc@5", r.acc5},         {"acc@10", r.acc10}, {"mrr", r.mrr}};
}

inline nlohmann::json to_json(const StratifiedReport& r) {
  nlohmann::json j;
  j["overall"] = to_json(r.overall);
  j["thresholds"] = nlohmann::json::array();
  for (const auto& t : r.thresholds) {
    nlohmann::json e{{"threshold", t.threshold}, {"n_high", t.n_high}, {"n_low", t.n_low}};
    e["high"] = t.high ? to_json(*t.high) : nlohmann::json(nullptr);
    e["low"] = t.low ? to_json(*t.low) : nlohmann::json(nullptr);
    j["thresholds"].push_back(e);
  }
  return j;
}

inline void write_text(std::ostream& os, const StratifiedReport& r) {
  const auto row = [&](const std::string& label, std::size_t n, const std::optional<EvalReport>& m) {
    os << std::left << std::setw(16) << label << std::right << std::setw(8) << n;
    if (m) {
      os << std::fixed << std::setprecision(4);
      for (double v : {m->acc1, m->acc3, m->acc5, m->acc10, m->mrr}) {
        os << std::setw(9) << v;
      }
    } else {
      for (int i = 0; i < 5; ++i) os << std::setw(9) << "-";
    }
    os << "\n";
  };
  os << std::left << std::setw(16) << "subset" << std::right << std::setw(8) << "n" << std::setw(9)
     << "acc@1" << std::setw(9) << "acc@3" << std::setw(9) << "acc@5" << std::setw(9) << "acc@10"
     << std::setw(9) << "mrr" << "\n";
  row("all", r.overall.n_samples, r.overall);
  for (const auto& t : r.thresholds) {
    std::ostringstream th;
    th << std::fixed << std::setprecision(2) << t.threshold;
    row("H >= " + th.str(), t.n_high, t.high);
    row("H <  " + th.str(), t.n_low, t.low);
  }
  os.unsetf(std::ios::floatfield);
}

// Long format: threshold,subset,metric,value (threshold empty for the
// overall rows).
inline void write_csv(std::ostream& os, const StratifiedReport& r) {
  os << "threshold,subset,metric,value\n";
  os << std::setprecision(17);
  const auto emit = [&](const std::string& th, const std::string& subset, std::size_t n,
                        const std::optional<EvalReport>& m) {
    os << th << ',' << subset << ",n_samples," << n << "\n";
    if (!m) return;
    os << th << ',' << subset << ",acc@1," << m->acc1 << "\n";
    os << th << ',' << subset << ",acc@3," << m->acc3 << "\n";
    os << th << ',' << subset << ",acc@5," << m->acc5 << "\n";
    os << th << ',' << subset << ",acc@10," << m->acc10 << "\n";
    os << th << ',' << subset << ",mrr," << m->mrr << "\n";
  };
  emit("", "all", r.overall.n_samples, r.overall);
  for (const auto& t : r.thresholds) {
    std::ostringstream th;
    th << t.threshold;
    emit(th.str(), "high", t.n_high, t.high);
    emit(th.str(), "low", t.n_low, t.low);
  }
}

}  // namespace canoe::eval
