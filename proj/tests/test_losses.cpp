#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "csip/losses.hpp"
#include "csip/rng.hpp"
#include "test_util.hpp"

using namespace csip;

TEST_CASE("label-smoothed cross entropy") {
  SUBCASE("uniform logits with eps=0 give log K") {
    auto rng = rng_stream(1, "ce.logk");
    CEConfig cfg(4, 5, 0.0, rng);
    cfg.classifier.zero_init();
    Tensor f = rand_uniform({3, 4}, -1, 1, rng);
    Tensor loss = ce_label_smoothing(f, {0, 2, 4}, cfg);
    CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  SUBCASE("eps=0 equals plain cross entropy on 50 random cases") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      auto rng = rng_stream(s, "ce.plain");
      CEConfig cfg(4, 3, 0.0, rng);
      Tensor f = rand_uniform({4, 4}, -1, 1, rng);
      const std::vector<int> labels{0, 2, 1, 0};
      Tensor loss = ce_label_smoothing(f, labels, cfg);
      const oracle::Mat logits = testutil::to_mat(cfg.classifier.forward(f));
      double plain = 0.0;
      for (std::size_t i = 0; i < 4; ++i) {
        plain += -std::log(
            oracle::softmax_row(logits[i])[static_cast<std::size_t>(labels[i])]);
      }
      CHECK(std::abs(loss.item() - plain / 4.0) < 1e-12);
    }
  }
  SUBCASE("random case matches the summation oracle with smoothing") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      auto rng = rng_stream(s, "ce.oracle");
      CEConfig cfg(6, 5, 0.1, rng);
      Tensor f = rand_uniform({4, 6}, -1, 1, rng);
      const std::vector<int> labels{3, 0, 4, 1};
      Tensor loss = ce_label_smoothing(f, labels, cfg);
      const oracle::Mat logits = testutil::to_mat(cfg.classifier.forward(f));
      CHECK(std::abs(loss.item() - oracle::ce_ls(logits, labels, 0.1)) < 1e-9);
    }
  }
  SUBCASE("loss is at least the entropy of the smoothed target") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      auto rng = rng_stream(s, "ce.gibbs");
      const double eps = 0.2;
      const std::size_t k = 4;
      CEConfig cfg(5, k, eps, rng);
      Tensor f = rand_uniform({3, 5}, -2, 2, rng);
      Tensor loss = ce_label_smoothing(f, {1, 3, 0}, cfg);
      double entropy = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double q = (c == 0 ? 1.0 - eps : 0.0) + eps / static_cast<double>(k);
        entropy += -q * std::log(q);
      }
      CHECK(loss.item() >= entropy - 1e-12);
    }
  }
  SUBCASE("config validation") {
    auto rng = rng_stream(2, "ce.bad");
    CHECK_THROWS(CEConfig(4, 3, 1.0, rng));
    CEConfig cfg(4, 3, 0.1, rng);
    CHECK_THROWS(ce_label_smoothing(Tensor::zeros({2, 4}), {0, 3}, cfg));  // label out of range
  }
}

TEST_CASE("batch-hard triplet") {
  TripletConfig cfg{0.3, false};

  SUBCASE("identical features give exactly the margin") {
    Tensor f = Tensor::full({4, 3}, 0.7);
    Tensor loss = batch_hard_triplet(f, {0, 0, 1, 1}, cfg);
    CHECK(loss.item() == doctest::Approx(0.3).epsilon(1e-15));
  }
  SUBCASE("coincident positives and distant negatives give zero") {
    Tensor f = Tensor::from_data({4, 2}, {0, 0, 0, 0, 10, 10, 10, 10});
    Tensor loss = batch_hard_triplet(f, {0, 0, 1, 1}, cfg);
    CHECK(loss.item() == 0.0);
  }
  SUBCASE("random PK batch matches the exhaustive oracle") {
    for (std::uint64_t s = 0; s < 25; ++s) {
      auto rng = rng_stream(s, "tri.oracle");
      Tensor f = rand_uniform({8, 5}, -1, 1, rng);
      const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
      Tensor loss = batch_hard_triplet(f, labels, cfg);
      CHECK(std::abs(loss.item() -
                     oracle::batch_hard_triplet(testutil::to_mat(f), labels, 0.3)) < 1e-10);
    }
  }
  SUBCASE("invariant under rigid translation of all features") {
    auto rng = rng_stream(3, "tri.shift");
    Tensor f = rand_uniform({6, 4}, -1, 1, rng);
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    const double base = batch_hard_triplet(f, labels, cfg).item();
    Tensor shift = rand_uniform({1, 4}, -5, 5, rng);
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < 6; ++i) rows.push_back(add(slice(f, 0, i, 1), shift));
    const double shifted = batch_hard_triplet(concat(rows, 0), labels, cfg).item();
    CHECK(std::abs(base - shifted) < 1e-12);
  }
  SUBCASE("PK structure is required") {
    Tensor f = Tensor::zeros({3, 2});
    CHECK_THROWS_WITH_AS(batch_hard_triplet(f, {0, 0, 0}, cfg),
                         doctest::Contains("PK structure"), std::runtime_error);
    CHECK_THROWS_WITH_AS(batch_hard_triplet(f, {0, 0, 1}, cfg),
                         doctest::Contains("PK structure"), std::runtime_error);
  }
  SUBCASE("squared-distance flag changes the metric") {
    Tensor f = Tensor::from_data({4, 2}, {0, 0, 0.6, 0, 0, 0.7, 0.1, 0.7});
    const std::vector<int> labels{0, 0, 1, 1};
    TripletConfig sq{0.3, true};
    // anchors 0 and 1 have active hinges under the Euclidean metric
    const double euclid_expect = (0.2 + (0.9 - std::sqrt(0.74))) / 4.0;
    CHECK(batch_hard_triplet(f, labels, cfg).item() ==
          doctest::Approx(euclid_expect).epsilon(1e-12));
    CHECK(batch_hard_triplet(f, labels, sq).item() == doctest::Approx(0.0425).epsilon(1e-12));
  }
}
