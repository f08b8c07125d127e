#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "canoe/data.hpp"
#include "canoe/eval.hpp"
#include "canoe/mmc.hpp"

using canoe::ContractViolation;
namespace data = canoe::data;
namespace mmc = canoe::mmc;

namespace {

data::ActivitySequence seq_of(std::size_t user, std::vector<std::size_t> locs) {
  data::ActivitySequence s;
  s.user = user;
  for (std::size_t i = 0; i < locs.size(); ++i) {
    s.locations.push_back(locs[i]);
    s.slots.push_back(i % 24);
    s.timestamps.push_back(static_cast<std::int64_t>(i) * 3600);
  }
  return s;
}

data::WindowSample query(std::size_t user, std::size_t current, std::size_t target) {
  data::WindowSample w;
  w.user = user;
  w.context_locations = {current};
  w.context_slots = {0};
  w.target_location = target;
  w.target_index = 1;
  return w;
}

}  // namespace

TEST(Mmc, AlternatingSequence) {
  // a=0, b=1
  std::vector<data::ActivitySequence> seqs{seq_of(0, {0, 1, 0, 1})};
  const auto m = mmc::fit_mmc(seqs, 3);
  ASSERT_NE(m.user_row(0, 0), nullptr);
  EXPECT_DOUBLE_EQ(mmc::row_probability(*m.user_row(0, 0), 1), 1.0);
  EXPECT_DOUBLE_EQ(mmc::row_probability(*m.user_row(0, 1), 0), 1.0);
  EXPECT_EQ(mmc::rank_locations(m, 0, 0).front(), 1u);
  EXPECT_EQ(mmc::rank_locations(m, 0, 1).front(), 0u);
}

TEST(Mmc, SelfLoopAndExit) {
  std::vector<data::ActivitySequence> seqs{seq_of(0, {0, 0, 1})};
  const auto m = mmc::fit_mmc(seqs, 2);
  EXPECT_DOUBLE_EQ(mmc::row_probability(*m.user_row(0, 0), 0), 0.5);
  EXPECT_DOUBLE_EQ(mmc::row_probability(*m.user_row(0, 0), 1), 0.5);
  // Tie between 0 and 1 in the user row; the global row ties too; id wins.
  EXPECT_EQ(mmc::rank_locations(m, 0, 0), (std::vector<std::size_t>{0, 1}));
}

TEST(Mmc, CountsMatchBruteForceOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> loc(0, 5);
  std::uniform_int_distribution<std::size_t> len(0, 30);
  std::uniform_int_distribution<std::size_t> user(0, 3);
  std::vector<data::ActivitySequence> seqs;
  for (int i = 0; i < 100; ++i) {
    std::vector<std::size_t> locs(len(rng));
    for (auto& l : locs) l = loc(rng);
    seqs.push_back(seq_of(user(rng), locs));
  }
  const auto m = mmc::fit_mmc(seqs, 6);
  for (std::size_t u = 0; u < 4; ++u) {
    for (std::size_t a = 0; a < 6; ++a) {
      std::size_t from_total = 0;
      std::size_t g_from_total = 0;
      std::map<std::size_t, std::size_t> c, g;
      for (const auto& s : seqs) {
        for (std::size_t i = 1; i < s.size(); ++i) {
          if (s.locations[i - 1] != a) continue;
          ++g[s.locations[i]];
          ++g_from_total;
          if (s.user == u) {
            ++c[s.locations[i]];
            ++from_total;
          }
        }
      }
      const auto* row = m.user_row(u, a);
      EXPECT_EQ(row != nullptr, from_total > 0);
      for (std::size_t b = 0; b < 6; ++b) {
        if (row) {
          EXPECT_DOUBLE_EQ(mmc::row_probability(*row, b),
                           static_cast<double>(c[b]) / static_cast<double>(from_total));
        }
        if (g_from_total > 0) {
          EXPECT_DOUBLE_EQ(mmc::row_probability(*m.global_row(a), b),
                           static_cast<double>(g[b]) / static_cast<double>(g_from_total));
        }
      }
    }
  }
}

TEST(Mmc, RankingIsPermutation) {
  std::vector<data::ActivitySequence> seqs{seq_of(0, {0, 1, 2, 0, 1}), seq_of(1, {3, 3, 2})};
  const auto m = mmc::fit_mmc(seqs, 6);
  for (std::size_t u = 0; u < 3; ++u) {
    for (std::size_t a = 0; a < 6; ++a) {
      auto order = mmc::rank_locations(m, u, a);
      std::sort(order.begin(), order.end());
      EXPECT_EQ(order, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
    }
  }
}

TEST(Mmc, FallsBackToGlobalRow) {
  // User 2 never left location 0; user 0 went 0 -> 4 twice, user 1 went 0 -> 3 once.
  std::vector<data::ActivitySequence> seqs{seq_of(0, {0, 4, 0, 4}), seq_of(1, {0, 3}),
                                           seq_of(2, {1, 2})};
  const auto m = mmc::fit_mmc(seqs, 6);
  EXPECT_EQ(m.user_row(2, 0), nullptr);
  const auto order = mmc::rank_locations(m, 2, 0);
  EXPECT_EQ(order[0], 4u);
  EXPECT_EQ(order[1], 3u);
}

TEST(Mmc, FallsBackToPopularity) {
  // Location 5 is never a source; arrivals: 1 x1, 2 x2, 0 x1.
  std::vector<data::ActivitySequence> seqs{seq_of(0, {0, 2, 0, 1, 2})};
  const auto m = mmc::fit_mmc(seqs, 6);
  EXPECT_EQ(m.global_row(5), nullptr);
  const auto order = mmc::rank_locations(m, 0, 5);
  EXPECT_EQ(order, (std::vector<std::size_t>{2, 0, 1, 3, 4, 5}));
}

TEST(Mmc, SecondaryKeyBreaksUserTies) {
  // User 0 from 0: {1, 2} once each. Globally 2 is more frequent after 0.
  std::vector<data::ActivitySequence> seqs{seq_of(0, {0, 1, 0, 2}), seq_of(1, {0, 2})};
  const auto m = mmc::fit_mmc(seqs, 4);
  const auto order = mmc::rank_locations(m, 0, 0);
  EXPECT_EQ(order[0], 2u);
  EXPECT_EQ(order[1], 1u);
}

TEST(Mmc, InvariantToSequenceOrder) {
  std::mt19937_64 rng(2);
  std::vector<data::ActivitySequence> seqs;
  for (std::size_t u = 0; u < 8; ++u) {
    std::vector<std::size_t> locs(20);
    for (auto& l : locs) l = rng() % 7;
    seqs.push_back(seq_of(u, locs));
  }
  const auto a = mmc::fit_mmc(seqs, 7);
  std::shuffle(seqs.begin(), seqs.end(), rng);
  const auto b = mmc::fit_mmc(seqs, 7);
  EXPECT_EQ(a.user_rows, b.user_rows);
  EXPECT_EQ(a.global_rows, b.global_rows);
  EXPECT_EQ(a.popularity, b.popularity);
}

TEST(Mmc, NoTransitionsRejected) {
  std::vector<data::ActivitySequence> seqs{seq_of(0, {3})};
  EXPECT_THROW(mmc::fit_mmc(seqs, 5), ContractViolation);
}

TEST(Mmc, RankSamplesUsesLastContextLocation) {
  std::vector<data::ActivitySequence> seqs{seq_of(0, {0, 1, 2, 0, 1, 2})};
  const auto m = mmc::fit_mmc(seqs, 4);
  std::vector<data::WindowSample> samples{query(0, 0, 1), query(0, 1, 2), query(0, 2, 1)};
  samples[0].context_locations = {2, 0};
  const auto ranks = mmc::rank_samples(m, samples);
  EXPECT_EQ(ranks[0], 1u);
  EXPECT_EQ(ranks[1], 1u);
  EXPECT_EQ(ranks[2], 2u);
}

TEST(Mmc, PerfectOnPureReturners) {
  data::SyntheticConfig cfg;
  cfg.num_users = 30;
  cfg.seed = 6;
  const auto p = data::prepare(data::generate_synthetic(cfg), {});
  const auto m = mmc::fit_mmc(mmc::training_prefixes(p), p.num_locations);
  const auto ranks = mmc::rank_samples(m, p.splits.test);
  EXPECT_EQ(canoe::eval::compute_metrics(ranks).acc1, 1.0);
}
