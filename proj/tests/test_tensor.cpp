#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "csip/gradcheck.hpp"
#include "csip/ops.hpp"
#include "csip/rng.hpp"
#include "csip/serialize.hpp"
#include "test_util.hpp"

using namespace csip;

TEST_CASE("softmax of equal logits is uniform") {
  Tensor y = softmax(Tensor::from_data({2}, {0.0, 0.0}));
  CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax rows are non-negative and sum to 1") {
  for (std::uint64_t s = 0; s < 25; ++s) {
    auto rng = rng_stream(s, "softmax.prop");
    Tensor x = rand_uniform({4, 7}, -30.0, 30.0, rng);
    Tensor y = softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(y.at(r, c) >= 0.0);
        total += y.at(r, c);
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("matmul against identity and loop oracle") {
  auto rng = rng_stream(7, "matmul");
  Tensor a = rand_uniform({3, 3}, -2, 2, rng);
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(testutil::bitwise_equal(matmul(eye, a), a));

  Tensor b = rand_uniform({3, 5}, -2, 2, rng);
  Tensor c = matmul(a, b);
  oracle::Mat expect = oracle::matmul(testutil::to_mat(a), testutil::to_mat(b));
  CHECK(testutil::max_abs_diff(c, testutil::from_mat(expect)) < 1e-12);
}

TEST_CASE("backward: d/dx sum(x*x) = 2x") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  sum_all(mul(x, x)).backward();
  CHECK((*x.grad)[0] == doctest::Approx(2.0));
  CHECK((*x.grad)[1] == doctest::Approx(4.0));
  CHECK((*x.grad)[2] == doctest::Approx(6.0));
}

TEST_CASE("backward: f(x)=x^2 at 3") {
  Tensor x = Tensor::scalar(3.0, true);
  mul(x, x).backward();
  CHECK((*x.grad)[0] == doctest::Approx(6.0));
}

TEST_CASE("backward: log softmax picked entry at [0,0]") {
  Tensor x = Tensor::from_data({1, 2}, {0.0, 0.0}, true);
  gather_rc(log(softmax(x)), {{0, 0}}).backward();
  CHECK((*x.grad)[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK((*x.grad)[1] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar with a record") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS(mul(x, x).backward());          // non-scalar
  CHECK_THROWS(Tensor::scalar(1.0).backward()); // no record
}

TEST_CASE("finite_diff_check on simple functions") {
  Tensor x = Tensor::from_data({4}, {0.3, -1.2, 0.7, 2.0});
  CHECK(finite_diff_check([](const Tensor& t) { return sum_all(t); }, x) <= 1e-10);

  Tensor two = Tensor::scalar(2.0);
  const double err = finite_diff_check(
      [](const Tensor& t) { return mul(mul(t, t), t); }, two, 1e-5);
  CHECK(err < 1e-8);

  CHECK_THROWS(finite_diff_check([](const Tensor& t) { return mul(t, t); },
                                 Tensor::from_data({2}, {1, 2})));
}

TEST_CASE("three-layer composite passes a tight finite-difference check") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto rng = rng_stream(s, "composite3");
    Tensor w1 = rand_uniform({4, 4}, -0.7, 0.7, rng);
    Tensor w2 = rand_uniform({4, 3}, -0.7, 0.7, rng);
    Tensor x = rand_uniform({2, 4}, -1, 1, rng);
    const double err = finite_diff_check(
        [&](const Tensor& t) {
          return sum_all(softmax(matmul(tanh(matmul(t, w1)), w2)));
        },
        x, 1e-5);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("reshape and transpose round-trips are bitwise") {
  auto rng = rng_stream(3, "roundtrip");
  Tensor x = rand_uniform({4, 6}, -5, 5, rng);
  CHECK(testutil::bitwise_equal(reshape(reshape(x, {2, 12}), {4, 6}), x));
  CHECK(testutil::bitwise_equal(transpose(transpose(x)), x));
}

TEST_CASE("shape errors name the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 3});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), std::runtime_error);
  try {
    matmul(a, Tensor::zeros({2, 2}));
    CHECK(false);
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(2, 2)") != std::string::npos);
  }
}

TEST_CASE("no implicit broadcasting") {
  CHECK_THROWS(add(Tensor::zeros({2, 3}), Tensor::zeros({3})));
  CHECK_THROWS(mul(Tensor::zeros({4}), Tensor::zeros({1})));
}

TEST_CASE("gradient accumulates across shared uses") {
  Tensor x = Tensor::scalar(2.0, true);
  add(mul(x, x), x).backward();  // d(x^2 + x) = 2x + 1
  CHECK((*x.grad)[0] == doctest::Approx(5.0));
}

TEST_CASE("embedding and layer_norm basic behavior") {
  Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor picked = embedding(table, {2, 0});
  CHECK(picked.at(0, 0) == 5.0);
  CHECK(picked.at(1, 1) == 2.0);
  CHECK_THROWS(embedding(table, {3}));

  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  auto rng = rng_stream(1, "ln");
  Tensor x = rand_uniform({3, 4}, -2, 2, rng);
  Tensor y = layer_norm(x, gamma, beta, 1e-5);
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0;
    for (std::size_t c = 0; c < 4; ++c) mu += y.at(r, c);
    CHECK(std::abs(mu) < 1e-9);
  }
}

TEST_CASE("pairwise_sqdist matches the loop definition") {
  auto rng = rng_stream(9, "psd");
  Tensor a = rand_uniform({3, 4}, -1, 1, rng);
  Tensor b = rand_uniform({2, 4}, -1, 1, rng);
  Tensor d = pairwise_sqdist(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        const double diff = a.at(i, c) - b.at(j, c);
        acc += diff * diff;
      }
      CHECK(d.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint container round-trips bitwise") {
  auto rng = rng_stream(11, "ckpt");
  ParamMap params;
  params.add("enc.weight", rand_uniform({4, 3}, -2, 2, rng, true));
  params.add("enc.bias", rand_uniform({3}, -2, 2, rng, true));
  params.add("head.proj.weight", rand_uniform({3, 5}, -2, 2, rng, true));

  const std::string path = (std::filesystem::temp_directory_path() / "csip_ckpt_test.bin").string();
  save_checkpoint(path, params);
  ParamMap loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(loaded.items[i].first == params.items[i].first);
    CHECK(testutil::bitwise_equal(loaded.items[i].second, params.items[i].second));
  }

  // load-into with matching shapes
  ParamMap fresh;
  fresh.add("enc.weight", Tensor::zeros({4, 3}, true));
  fresh.add("enc.bias", Tensor::zeros({3}, true));
  fresh.add("head.proj.weight", Tensor::zeros({3, 5}, true));
  load_checkpoint_into(path, fresh);
  CHECK(testutil::bitwise_equal(*fresh.find("enc.bias"), *params.find("enc.bias")));

  ParamMap wrong;
  wrong.add("enc.weight", Tensor::zeros({4, 4}, true));
  CHECK_THROWS(load_checkpoint_into(path, wrong));
  std::filesystem::remove(path);
}

TEST_CASE("matrix file round-trips bitwise") {
  auto rng = rng_stream(13, "mat");
  Tensor m = rand_uniform({2, 3, 4}, -10, 10, rng);
  const std::string path = (std::filesystem::temp_directory_path() / "csip_mat_test.bin").string();
  save_matrix(path, m);
  CHECK(testutil::bitwise_equal(load_matrix(path), m));
  std::filesystem::remove(path);
}

TEST_CASE("feature file carries the id/cam sidecar") {
  auto rng = rng_stream(14, "feat");
  Tensor f = rand_uniform({3, 4}, -1, 1, rng);
  const std::string path = (std::filesystem::temp_directory_path() / "csip_feat_test.bin").string();
  save_features(path, f, {1, 2, 3}, {0, 0, 1});
  FeatureFile loaded = load_features(path);
  CHECK(testutil::bitwise_equal(loaded.feats, f));
  CHECK(loaded.pids == std::vector<int>{1, 2, 3});
  CHECK(loaded.camids == std::vector<int>{0, 0, 1});
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".meta.json");
}

TEST_CASE("every registered gradcheck case passes at tolerance 1e-3 over seeds") {
  // the acceptance suite runs 20 seeds; keep the unit run quick
  auto rows = run_gradcheck_suite(3, 1e-3);
  for (const auto& row : rows) {
    INFO(row.name, " max err ", row.max_error);
    CHECK(row.passed);
  }
}
