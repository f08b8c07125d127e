#pragma once

// User-location topic model. Users are documents and visited locations are
// words; topic assignments are inferred by collapsed Gibbs sampling and the
// per-user topic mixture feeds a small MLP that produces the user-location
// pair feature.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "canoe/dcg.hpp"
#include "canoe/layers.hpp"

namespace canoe::topics {

struct CoOccurrenceMatrix {
  std::size_t users = 0;
  std::size_t locations = 0;
  std::vector<std::uint32_t> counts;  // row-major [users x locations]

  CoOccurrenceMatrix() = default;
  CoOccurrenceMatrix(std::size_t u, std::size_t l) : users(u), locations(l), counts(u * l, 0) {}

  std::uint32_t& at(std::size_t u, std::size_t l) { return counts[u * locations + l]; }
  std::uint32_t at(std::size_t u, std::size_t l) const { return counts[u * locations + l]; }

  std::size_t row_total(std::size_t u) const {
    std::size_t total = 0;
    for (std::size_t l = 0; l < locations; ++l) {
      total += at(u, l);
    }
    return total;
  }
};

struct LdaOptions {
  std::size_t num_topics = 450;
  double alpha = 0.0;  // <= 0 selects 50 / num_topics
  double beta = 0.01;
  std::size_t iterations = 500;
  std::uint64_t seed = 0;

  double resolved_alpha() const {
    return alpha > 0.0 ? alpha : 50.0 / static_cast<double>(num_topics);
  }
};

struct TopicModel {
  std::size_t num_topics = 0;
  std::size_t num_users = 0;
  std::size_t num_locations = 0;
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  std::vector<double> theta;  // [users x topics]
  std::vector<double> phi;    // [topics x locations]

  std::span<const double> user_row(std::size_t u) const {
    return std::span<const double>(theta).subspan(u * num_topics, num_topics);
  }
};

// Collapsed Gibbs sampling over explicit token lists, one list of location
// ids per user. Tokens are visited in list order, so the result is a pure
// function of (documents, options).
inline TopicModel fit_lda_documents(const std::vector<std::vector<std::size_t>>& documents,
                                    std::size_t num_locations, const LdaOptions& options) {
  const std::size_t topics = options.num_topics;
  require(topics >= 2, "fit_lda: need at least two topics");
  require(num_locations > 0, "fit_lda: empty vocabulary");
  std::size_t tokens = 0;
  for (const auto& doc : documents) {
    tokens += doc.size();
    for (std::size_t w : doc) {
      require(w < num_locations, "fit_lda: location id out of range");
    }
  }
  require(tokens > 0, "fit_lda: empty corpus");

  const double alpha = options.resolved_alpha();
  const double beta = options.beta;
  require(alpha > 0.0 && beta > 0.0, "fit_lda: priors must be positive");
  const double vocab_beta = static_cast<double>(num_locations) * beta;

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_topic(0, topics - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const std::size_t users = documents.size();
  std::vector<std::uint32_t> doc_topic(users * topics, 0);
  std::vector<std::uint32_t> topic_word(topics * num_locations, 0);
  std::vector<std::uint32_t> topic_total(topics, 0);
  std::vector<std::vector<std::size_t>> assignment(users);

  for (std::size_t d = 0; d < users; ++d) {
    assignment[d].resize(documents[d].size());
    for (std::size_t n = 0; n < documents[d].size(); ++n) {
      const std::size_t z = pick_topic(rng);
      const std::size_t w = documents[d][n];
      assignment[d][n] = z;
      ++doc_topic[d * topics + z];
      ++topic_word[z * num_locations + w];
      ++topic_total[z];
    }
  }

  std::vector<double> cumulative(topics);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    for (std::size_t d = 0; d < users; ++d) {
      for (std::size_t n = 0; n < documents[d].size(); ++n) {
        const std::size_t w = documents[d][n];
        std::size_t z = assignment[d][n];
        --doc_topic[d * topics + z];
        --topic_word[z * num_locations + w];
        --topic_total[z];

        double acc = 0.0;
        for (std::size_t k = 0; k < topics; ++k) {
          acc += (doc_topic[d * topics + k] + alpha) *
                 (topic_word[k * num_locations + w] + beta) / (topic_total[k] + vocab_beta);
          cumulative[k] = acc;
        }
        const double u = unit(rng) * acc;
        z = 0;
        while (z + 1 < topics && cumulative[z] <= u) {
          ++z;
        }

        assignment[d][n] = z;
        ++doc_topic[d * topics + z];
        ++topic_word[z * num_locations + w];
        ++topic_total[z];
      }
    }
  }

  TopicModel model;
  model.num_topics = topics;
  model.num_users = users;
  model.num_locations = num_locations;
  model.alpha = alpha;
  model.beta = beta;
  model.iterations = options.iterations;
  model.seed = options.seed;
  model.theta.resize(users * topics);
  model.phi.resize(topics * num_locations);
  const double topic_alpha = static_cast<double>(topics) * alpha;
  for (std::size_t d = 0; d < users; ++d) {
    const auto len = static_cast<double>(documents[d].size());
    for (std::size_t k = 0; k < topics; ++k) {
      model.theta[d * topics + k] = (doc_topic[d * topics + k] + alpha) / (len + topic_alpha);
    }
  }
  for (std::size_t k = 0; k < topics; ++k) {
    for (std::size_t w = 0; w < num_locations; ++w) {
      model.phi[k * num_locations + w] =
          (topic_word[k * num_locations + w] + beta) / (topic_total[k] + vocab_beta);
    }
  }
  return model;
}

// Expands each user's row of counts into tokens in ascending location order.
inline TopicModel fit_lda(const CoOccurrenceMatrix& counts, const LdaOptions& options) {
  std::vector<std::vector<std::size_t>> documents(counts.users);
  for (std::size_t u = 0; u < counts.users; ++u) {
    for (std::size_t l = 0; l < counts.locations; ++l) {
      documents[u].insert(documents[u].end(), counts.at(u, l), l);
    }
  }
  return fit_lda_documents(documents, counts.locations, options);
}

// Frozen topic mixture of one user, [topics].
inline dcg::Tensor user_topic_distribution(const TopicModel& model, std::size_t user) {
  require(user < model.num_users, "user_topic_distribution: unknown user");
  const auto row = model.user_row(user);
  return dcg::Tensor::constant({model.num_topics}, std::vector<double>(row.begin(), row.end()));
}

// Topic mixtures for a batch of users, [batch x topics].
inline dcg::Tensor user_topic_batch(const TopicModel& model, std::span<const std::size_t> users) {
  std::vector<double> out;
  out.reserve(users.size() * model.num_topics);
  for (std::size_t u : users) {
    require(u < model.num_users, "user_topic_batch: unknown user");
    const auto row = model.user_row(u);
    out.insert(out.end(), row.begin(), row.end());
  }
  return dcg::Tensor::constant({users.size(), model.num_topics}, std::move(out));
}

// Two-layer MLP from a topic mixture to the user-location pair feature.
class UserLocationHead {
 public:
  UserLocationHead() = default;
  UserLocationHead(dcg::ParamRegistry& registry, const std::string& name, std::size_t num_topics,
                   std::size_t dim, layers::Rng& rng)
      : mlp_(registry, name, num_topics, dim, dim, rng) {}

  dcg::Tensor operator()(const dcg::Tensor& topic_mixture) const { return mlp_(topic_mixture); }

  const layers::Mlp2& mlp() const { return mlp_; }

 private:
  layers::Mlp2 mlp_;
};

}  // namespace canoe::topics
