#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "canoe/optim.hpp"
#include "canoe/topics.hpp"

using canoe::ContractViolation;
using canoe::dcg::ParamRegistry;
namespace dcg = canoe::dcg;
namespace topics = canoe::topics;

namespace {

// Users 0..4 visit only locations {1, 2}; users 5..9 only {3, 4}.
topics::CoOccurrenceMatrix two_cluster_corpus() {
  topics::CoOccurrenceMatrix v(10, 5);
  for (std::size_t u = 0; u < 10; ++u) {
    const std::size_t first = u < 5 ? 1 : 3;
    v.at(u, first) = static_cast<std::uint32_t>(40 + u % 3);
    v.at(u, first + 1) = static_cast<std::uint32_t>(30 + (u * 7) % 4);
  }
  return v;
}

std::size_t argmax_topic(const topics::TopicModel& m, std::size_t u) {
  const auto row = m.user_row(u);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

void expect_row_stochastic(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      EXPECT_GE(m[r * cols + c], 0.0);
      s += m[r * cols + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

}  // namespace

TEST(Lda, TwoClusterCorpusIsSeparatedForSeveralSeeds) {
  const auto v = two_cluster_corpus();
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    topics::LdaOptions opt;
    opt.num_topics = 2;
    opt.iterations = 200;
    opt.seed = seed;
    const auto m = topics::fit_lda(v, opt);
    const std::size_t a = argmax_topic(m, 0);
    for (std::size_t u = 0; u < 5; ++u) EXPECT_EQ(argmax_topic(m, u), a) << "seed " << seed;
    for (std::size_t u = 5; u < 10; ++u) EXPECT_NE(argmax_topic(m, u), a) << "seed " << seed;
    expect_row_stochastic(m.theta, m.num_users, m.num_topics);
    expect_row_stochastic(m.phi, m.num_topics, m.num_locations);
  }
}

TEST(Lda, ReproducibleBitwise) {
  const auto v = two_cluster_corpus();
  topics::LdaOptions opt;
  opt.num_topics = 4;
  opt.iterations = 50;
  opt.seed = 9;
  EXPECT_EQ(topics::fit_lda(v, opt).theta, topics::fit_lda(v, opt).theta);
}

TEST(Lda, SingleUserSingleLocation) {
  topics::CoOccurrenceMatrix v(1, 1);
  v.at(0, 0) = 5;
  for (std::size_t k : {2u, 3u, 10u}) {
    topics::LdaOptions opt;
    opt.num_topics = k;
    opt.iterations = 10;
    const auto m = topics::fit_lda(v, opt);
    expect_row_stochastic(m.theta, 1, k);
  }
}

TEST(Lda, ZeroVisitUserIsUniform) {
  auto v = two_cluster_corpus();
  topics::CoOccurrenceMatrix w(11, 5);
  for (std::size_t u = 0; u < 10; ++u)
    for (std::size_t l = 0; l < 5; ++l) w.at(u, l) = v.at(u, l);
  topics::LdaOptions opt;
  opt.num_topics = 4;
  opt.iterations = 20;
  const auto m = topics::fit_lda(w, opt);
  dcg::Tensor c = topics::user_topic_distribution(m, 10);
  for (double x : c.values()) EXPECT_NEAR(x, 0.25, 1e-15);
}

TEST(Lda, RowStochasticAfterAnyIterationCount) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::uint32_t> count(0, 4);
  for (std::size_t iters : {0u, 1u, 7u, 30u}) {
    topics::CoOccurrenceMatrix v(6, 9);
    for (auto& c : v.counts) c = count(rng);
    v.at(0, 0) = 1;
    topics::LdaOptions opt;
    opt.num_topics = 5;
    opt.iterations = iters;
    const auto m = topics::fit_lda(v, opt);
    expect_row_stochastic(m.theta, 6, 5);
    expect_row_stochastic(m.phi, 5, 9);
  }
}

TEST(Lda, Contracts) {
  topics::CoOccurrenceMatrix empty(3, 4);
  topics::LdaOptions opt;
  opt.num_topics = 2;
  EXPECT_THROW(topics::fit_lda(empty, opt), ContractViolation);
  auto v = two_cluster_corpus();
  opt.num_topics = 1;
  EXPECT_THROW(topics::fit_lda(v, opt), ContractViolation);
  opt.num_topics = 2;
  opt.iterations = 1;
  const auto m = topics::fit_lda(v, opt);
  EXPECT_THROW(topics::user_topic_distribution(m, 10), ContractViolation);
}

TEST(Lda, DefaultAlphaIsFiftyOverTopics) {
  topics::LdaOptions opt;
  opt.num_topics = 450;
  EXPECT_DOUBLE_EQ(opt.resolved_alpha(), 50.0 / 450.0);
}

TEST(UserLocationHead, ZeroWeightsGiveZero) {
  ParamRegistry reg;
  canoe::layers::Rng rng(1);
  topics::UserLocationHead head(reg, "us", 4, 3, rng);
  for (const auto& [name, p] : reg) {
    for (double& x : p.mutable_values()) x = 0.0;
  }
  dcg::Tensor out = head(dcg::Tensor::constant({4}, {0.1, 0.2, 0.3, 0.4}));
  for (double x : out.values()) EXPECT_EQ(x, 0.0);
}

TEST(UserLocationHead, IdentityFirstLayerComposition) {
  ParamRegistry reg;
  canoe::layers::Rng rng(2);
  topics::UserLocationHead head(reg, "us", 3, 3, rng);
  auto w1 = reg.get("us.fc1.weight").mutable_values();
  for (std::size_t i = 0; i < 9; ++i) w1[i] = (i % 4 == 0) ? 1.0 : 0.0;
  const dcg::Tensor c = dcg::Tensor::constant({3}, {0.5, -0.25, 0.75});
  const auto w2 = reg.get("us.fc2.weight").values();
  dcg::Tensor out = head(c);
  for (std::size_t j = 0; j < 3; ++j) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) expect += std::max(0.0, c.values()[i]) * w2[i * 3 + j];
    EXPECT_NEAR(out.values()[j], expect, 1e-15);
  }
}

TEST(UserLocationHead, GradCheck) {
  ParamRegistry reg;
  canoe::layers::Rng rng(3);
  topics::UserLocationHead head(reg, "us", 5, 4, rng);
  for (const auto& [name, p] : reg) {
    if (name.find("bias") != std::string::npos) {
      for (double& x : p.mutable_values()) x = 0.05;
    }
  }
  const dcg::Tensor c = dcg::Tensor::constant({2, 5}, {.1, .2, .3, .2, .2, .5, .1, .1, .2, .1});
  EXPECT_LT(canoe::optim::grad_check([&] { return dcg::sum(head(c)); }, reg, 1e-6), 1e-6);
}
