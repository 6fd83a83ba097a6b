#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "csip/rng.hpp"
#include "csip/skeleton_encoder.hpp"
#include "test_util.hpp"

using namespace csip;

namespace {

SkeletonGraph path3() { return SkeletonGraph::from_edges(3, {{0, 1}, {1, 2}}); }

SkeletonGraph toy5() { return SkeletonGraph::from_edges(5, {{0, 1}, {0, 2}, {1, 3}, {1, 4}}); }

SkeletonSequence random_seq(std::size_t t, std::size_t j, std::mt19937_64& rng) {
  SkeletonSequence s;
  s.frames = t;
  s.joints = j;
  s.coords = *rand_uniform({t * j * 3}, -1.0, 1.0, rng).data;
  s.valid.assign(t, 1);
  return s;
}

// Dense normalized Laplacian of a graph, explicit loops.
oracle::Mat laplacian_of(const SkeletonGraph& g) {
  const std::size_t n = g.joints;
  std::vector<double> dinv(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0;
    for (std::size_t j = 0; j < n; ++j) deg += g.adj(i, j);
    dinv[i] = deg > 0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  oracle::Mat lap(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    lap[i][i] = 1.0;
    for (std::size_t j = 0; j < n; ++j)
      if (g.adj(i, j) != 0.0) lap[i][j] -= dinv[i] * dinv[j];
  }
  return lap;
}

}  // namespace

TEST_CASE("laplacian_pe on the path graph P3 gives [1,0,-1]/sqrt(2)") {
  Tensor pe = laplacian_pe(path3(), 1);
  REQUIRE(pe.shape == Shape{3, 1});
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(pe.at(0, 0) == doctest::Approx(s).epsilon(1e-9));
  CHECK(pe.at(1, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(pe.at(2, 0) == doctest::Approx(-s).epsilon(1e-9));
}

TEST_CASE("laplacian_pe columns are orthonormal eigenvectors") {
  const SkeletonGraph& g = SkeletonGraph::human36m();
  REQUIRE(g.joints == 17);
  Tensor pe = laplacian_pe(g, 5);
  // orthonormality
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = 0; b < 5; ++b) {
      double dot = 0.0;
      for (std::size_t r = 0; r < 17; ++r) dot += pe.at(r, a) * pe.at(r, b);
      CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-9);
    }
  // eigenpair residual against the independently built Laplacian
  oracle::Mat lap = laplacian_of(g);
  for (std::size_t col = 0; col < 5; ++col) {
    std::vector<double> lv(17, 0.0);
    for (std::size_t i = 0; i < 17; ++i)
      for (std::size_t j = 0; j < 17; ++j) lv[i] += lap[i][j] * pe.at(j, col);
    // Rayleigh quotient recovers the eigenvalue; residual must vanish
    double lambda = 0.0;
    for (std::size_t i = 0; i < 17; ++i) lambda += lv[i] * pe.at(i, col);
    CHECK(lambda > 1e-9);  // nonzero part of the spectrum
    for (std::size_t i = 0; i < 17; ++i) {
      CHECK(std::abs(lv[i] - lambda * pe.at(i, col)) < 1e-9);
    }
  }
  // sign convention: first nonzero component positive
  for (std::size_t col = 0; col < 5; ++col) {
    for (std::size_t r = 0; r < 17; ++r) {
      if (std::abs(pe.at(r, col)) > 1e-12) {
        CHECK(pe.at(r, col) > 0.0);
        break;
      }
    }
  }
}

TEST_CASE("joint relabeling permutes encoding rows (up to per-column sign)") {
  const SkeletonGraph g = toy5();
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};  // new index of old joint i
  std::vector<std::pair<int, int>> edges{{0, 1}, {0, 2}, {1, 3}, {1, 4}};
  std::vector<std::pair<int, int>> mapped;
  for (auto [a, b] : edges) {
    mapped.emplace_back(static_cast<int>(perm[static_cast<std::size_t>(a)]),
                        static_cast<int>(perm[static_cast<std::size_t>(b)]));
  }
  const SkeletonGraph gp = SkeletonGraph::from_edges(5, mapped);
  Tensor pe = laplacian_pe(g, 2);
  Tensor pep = laplacian_pe(gp, 2);
  for (std::size_t col = 0; col < 2; ++col) {
    // match up to a column sign
    double sign = 0.0;
    for (std::size_t r = 0; r < 5 && sign == 0.0; ++r) {
      if (std::abs(pe.at(r, col)) > 1e-9) {
        sign = pep.at(perm[r], col) / pe.at(r, col);
      }
    }
    CHECK(std::abs(std::abs(sign) - 1.0) < 1e-9);
    for (std::size_t r = 0; r < 5; ++r) {
      CHECK(pep.at(perm[r], col) == doctest::Approx(sign * pe.at(r, col)).epsilon(1e-8));
    }
  }
}

TEST_CASE("laplacian_pe errors when k exceeds the nonzero spectrum") {
  CHECK_THROWS(laplacian_pe(path3(), 3));  // k must stay below J
  // two components: spectrum has two zeros, so only 2 nonzero eigenvalues exist
  SkeletonGraph two = SkeletonGraph::from_edges(4, {{0, 1}, {2, 3}});
  CHECK_THROWS(laplacian_pe(two, 3));
  CHECK(laplacian_pe(two, 2).shape == Shape{4, 2});
}

TEST_CASE("graph validation rejects malformed adjacency") {
  SkeletonGraph g = toy5();
  g.adjacency[0 * 5 + 0] = 1.0;
  CHECK_THROWS(g.validate());
  SkeletonGraph h = toy5();
  h.adjacency[0 * 5 + 1] = 0.0;  // break symmetry
  CHECK_THROWS(h.validate());
  CHECK_THROWS(SkeletonGraph::from_edges(3, {{0, 3}}));
}

TEST_CASE("graph_embed components can be isolated") {
  auto rng = rng_stream(1, "ge");
  SGTConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.pe_dim = 2;
  cfg.layers = 1;
  SkeletonEncoder enc(cfg, toy5(), rng);
  Tensor coords = rand_uniform({5, 3}, -1, 1, rng);

  SUBCASE("zero positional projection leaves only the coordinate path") {
    enc.pos_proj.zero_init();
    Tensor a = enc.graph_embed(coords);
    Tensor b = enc.coord_embed.forward(coords);
    CHECK(testutil::max_abs_diff(a, b) == 0.0);
  }
  SUBCASE("zero coordinate MLP leaves only the positional path") {
    enc.coord_embed.fc1.zero_init();
    enc.coord_embed.fc2.zero_init();
    Tensor a = enc.graph_embed(coords);
    Tensor b = enc.pos_proj.forward(enc.pe);
    CHECK(testutil::max_abs_diff(a, b) == 0.0);
  }
  SUBCASE("random case matches the direct matrix oracle") {
    Tensor a = enc.graph_embed(coords);
    Tensor h = enc.coord_embed.fc2.forward(relu(enc.coord_embed.fc1.forward(coords)));
    Tensor p = enc.pos_proj.forward(enc.pe);
    CHECK(testutil::max_abs_diff(a, add(h, p)) < 1e-12);
  }
}

TEST_CASE("encode_sequence contracts") {
  auto rng = rng_stream(2, "enc.seq");
  SGTConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.pe_dim = 2;
  cfg.layers = 2;
  SkeletonEncoder enc(cfg, toy5(), rng);

  SUBCASE("shape is always T x (1+J) x C") {
    SkeletonSequence s = random_seq(4, 5, rng);
    SkeletonEncoding e = enc.encode_sequence(s);
    CHECK(e.frame_tokens.size() == 4);
    for (const Tensor& f : e.frame_tokens) CHECK(f.shape == Shape{6, 8});
    CHECK(e.frame_feats.shape == Shape{4, 8});
    CHECK(e.seq_feat.shape == Shape{8});
  }
  SUBCASE("zero layers: frame feature is the mean of graph embeddings") {
    SGTConfig c0 = cfg;
    c0.layers = 0;
    auto rng0 = rng_stream(3, "enc.l0");
    SkeletonEncoder e0(c0, toy5(), rng0);
    SkeletonSequence s = random_seq(2, 5, rng0);
    SkeletonEncoding e = e0.encode_sequence(s);
    Tensor coords = Tensor::from_data({5, 3},
                                      std::vector<double>(s.frame_ptr(0), s.frame_ptr(0) + 15));
    Tensor expect = mean(e0.graph_embed(coords), 0);
    CHECK(testutil::max_abs_diff(reshape(slice(e.frame_feats, 0, 0, 1), {8}), expect) < 1e-14);
  }
  SUBCASE("identical frames give seq_feat equal to the frame feature") {
    SkeletonSequence s = random_seq(1, 5, rng);
    SkeletonSequence s3 = s;
    s3.frames = 3;
    s3.valid.assign(3, 1);
    s3.coords.insert(s3.coords.end(), s.coords.begin(), s.coords.end());
    s3.coords.insert(s3.coords.end(), s.coords.begin(), s.coords.end());
    SkeletonEncoding e = enc.encode_sequence(s3);
    CHECK(testutil::max_abs_diff(e.seq_feat, reshape(slice(e.frame_feats, 0, 0, 1), {8})) <
          1e-14);
  }
  SUBCASE("empty tracklet errors") {
    SkeletonSequence s = random_seq(2, 5, rng);
    s.valid.assign(2, 0);
    CHECK_THROWS_WITH_AS(enc.encode_sequence(s), doctest::Contains("empty tracklet"),
                         std::runtime_error);
  }
}

TEST_CASE("gpc_loss trivial and oracle cases") {
  auto rng = rng_stream(4, "gpc");
  SGTConfig cfg;
  cfg.dim = 6;
  cfg.heads = 2;
  cfg.pe_dim = 2;
  cfg.layers = 1;
  cfg.gpc_alpha = 0.4;
  cfg.gpc_tau1 = 0.09;
  cfg.gpc_tau2 = 0.13;
  SkeletonEncoder enc(cfg, toy5(), rng);

  SUBCASE("single prototype: both terms are zero") {
    GraphPrototypeBank bank;
    bank.prototypes = rand_uniform({1, 6}, -1, 1, rng);
    Tensor sf = rand_uniform({3, 6}, -1, 1, rng);
    Tensor ff = rand_uniform({4, 6}, -1, 1, rng);
    Tensor loss = enc.gpc_loss(sf, {0, 0, 0}, ff, {0, 0, 0, 0}, bank);
    CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("orthogonal feature, K=4: sequence term is log 4") {
    GraphPrototypeBank bank;
    bank.prototypes = Tensor::zeros({4, 6});
    for (int k = 0; k < 4; ++k) (*bank.prototypes.data)[k * 6 + k] = 1.0;
    Tensor sf = Tensor::zeros({1, 6});
    (*sf.data)[5] = 1.0;  // orthogonal to every prototype
    SGTConfig pure = cfg;
    pure.gpc_alpha = 1.0;  // isolate the sequence term
    SkeletonEncoder enc2(pure, toy5(), rng);
    Tensor loss = enc2.gpc_loss(sf, {0}, sf, {0}, bank);
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("random K=3, N=5 matches the double-loop oracle") {
    GraphPrototypeBank bank;
    bank.prototypes = rand_uniform({3, 6}, -1, 1, rng);
    Tensor sf = rand_uniform({5, 6}, -1, 1, rng);
    Tensor ff = rand_uniform({7, 6}, -1, 1, rng);
    const std::vector<int> sl{0, 1, 2, 0, 1};
    const std::vector<int> fl{2, 1, 0, 0, 1, 2, 2};
    Tensor loss = enc.gpc_loss(sf, sl, ff, fl, bank);

    const double l_seq = oracle::prototype_contrast(testutil::to_mat(sf), sl,
                                                    testutil::to_mat(bank.prototypes),
                                                    cfg.gpc_tau1);
    // skeleton term goes through the projection heads
    auto project = [&](const Tensor& x, const Linear& lin) {
      return testutil::to_mat(lin.forward(x));
    };
    const double l_ske =
        oracle::prototype_contrast(project(ff, enc.gpc_f1), fl,
                                   project(bank.prototypes, enc.gpc_f2), cfg.gpc_tau2);
    CHECK(loss.item() ==
          doctest::Approx(cfg.gpc_alpha * l_seq + (1 - cfg.gpc_alpha) * l_ske).epsilon(1e-9));
  }
  SUBCASE("label outside the bank errors") {
    GraphPrototypeBank bank;
    bank.prototypes = rand_uniform({2, 6}, -1, 1, rng);
    Tensor sf = rand_uniform({1, 6}, -1, 1, rng);
    CHECK_THROWS(enc.gpc_loss(sf, {2}, sf, {0}, bank));
  }
  SUBCASE("gpc_loss is non-negative on random inputs") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      auto r2 = rng_stream(s, "gpc.nonneg");
      GraphPrototypeBank bank;
      bank.prototypes = rand_uniform({3, 6}, -1, 1, r2);
      Tensor sf = rand_uniform({4, 6}, -1, 1, r2);
      Tensor ff = rand_uniform({4, 6}, -1, 1, r2);
      Tensor loss = enc.gpc_loss(sf, {0, 1, 2, 0}, ff, {1, 1, 2, 0}, bank);
      CHECK(loss.item() >= 0.0);
    }
  }
}

TEST_CASE("stpr_loss behavior") {
  auto rng = rng_stream(5, "stpr");
  SGTConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.pe_dim = 2;
  cfg.layers = 1;
  cfg.mask_ratio = 0.3;
  SkeletonEncoder enc(cfg, toy5(), rng);

  SUBCASE("exact reconstruction gives zero loss") {
    // zeroed heads predict 0 for every masked position; with (near) zero
    // targets the L1 terms vanish
    SkeletonEncoder e2 = enc;
    e2.recon_struct = Linear::zeros(8, 3);
    e2.recon_traj = Linear::zeros(8, 3);
    SkeletonSequence z;
    z.frames = 2;
    z.joints = 5;
    z.coords.assign(2 * 5 * 3, 0.0);
    z.coords[0] = 1e-300;  // keeps frames usable without moving the targets
    z.coords[15] = 1e-300;
    z.valid.assign(2, 1);
    auto mask_rng = rng_stream(1, "stpr.mask");
    CHECK(e2.stpr_loss(z, mask_rng).item() <= 1e-299);
  }
  SUBCASE("beta = 1 removes the trajectory term") {
    SGTConfig c = cfg;
    c.stpr_beta = 1.0;
    auto r2 = rng_stream(6, "stpr.beta");
    SkeletonEncoder e2(c, toy5(), r2);
    SkeletonSequence s = random_seq(3, 5, r2);
    auto m1 = rng_stream(2, "stpr.mask");
    const double before = e2.stpr_loss(s, m1).item();
    // perturbing the trajectory head must not change the loss
    for (double& v : *e2.recon_traj.weight.data) v += 7.0;
    auto m2 = rng_stream(2, "stpr.mask");
    const double after = e2.stpr_loss(s, m2).item();
    CHECK(before == after);
  }
  SUBCASE("fixed stream gives identical scalars") {
    SkeletonSequence s = random_seq(4, 5, rng);
    auto m1 = rng_stream(3, "stpr.mask");
    auto m2 = rng_stream(3, "stpr.mask");
    CHECK(enc.stpr_loss(s, m1).item() == enc.stpr_loss(s, m2).item());
  }
  SUBCASE("non-negative, and invalid mask ratio errors") {
    SkeletonSequence s = random_seq(3, 5, rng);
    auto m = rng_stream(4, "stpr.mask");
    CHECK(enc.stpr_loss(s, m).item() >= 0.0);
    SGTConfig bad = cfg;
    bad.mask_ratio = 1.0;
    CHECK_THROWS(bad.validate());
  }
  SUBCASE("single usable frame errors on the trajectory precondition") {
    SkeletonSequence s = random_seq(1, 5, rng);
    auto m = rng_stream(5, "stpr.mask");
    CHECK_THROWS(enc.stpr_loss(s, m));
  }
}

TEST_CASE("sgt_objective is the stated affine mix") {
  Tensor g = Tensor::scalar(2.0);
  Tensor s = Tensor::scalar(4.0);
  CHECK(sgt_objective(g, s, 1.0).item() == 2.0);
  CHECK(sgt_objective(g, s, 0.0).item() == 4.0);
  CHECK(sgt_objective(g, s, 0.5).item() == doctest::Approx(3.0));
  CHECK_THROWS(sgt_objective(g, s, 1.5));
}

TEST_CASE("prototype bank rows are per-identity means") {
  Tensor f = Tensor::from_data({4, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  GraphPrototypeBank bank = build_prototype_bank(f, {0, 0, 1, 1});
  CHECK(bank.prototypes.at(0, 0) == doctest::Approx(2.0));
  CHECK(bank.prototypes.at(0, 1) == doctest::Approx(3.0));
  CHECK(bank.prototypes.at(1, 0) == doctest::Approx(20.0));
  CHECK_THROWS(build_prototype_bank(f, {0, 0, 2, 2}));  // identity 1 empty
}
