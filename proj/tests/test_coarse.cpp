#include <doctest.h>

#include <cmath>
#include <random>

#include "dmseg/coarse_grain.hpp"
#include "dmseg/error.hpp"
#include "test_support.hpp"

using namespace dmseg;
using testing_support::random_kernel;
using testing_support::two_clique_kernel;

namespace {

DiffusionEmbedding full_embedding(const MarkovChain& chain, int tau = 1) {
  SpectralOptions opt;
  opt.eigenpairs = chain.n;
  return spectral_decompose(chain, chain.n - 1, tau, 0.01, opt);
}

std::vector<std::size_t> random_assign(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = i < k ? i : rng() % k;
  return a;
}

}  // namespace

TEST_SUITE("coarse") {

TEST_CASE("singleton partition has zero distortion") {
  std::mt19937_64 rng(1);
  auto chain = normalize_markov(affinity_from_dense(random_kernel(8, rng)));
  auto emb = full_embedding(chain);
  auto p = embed_kmeans(emb, chain.phi0, 8);
  CHECK(p.distortion == 0.0);
  CHECK(distortion(p, emb.coords, chain.phi0) == 0.0);
}

TEST_CASE("two cliques: k-means finds the distortion-optimal 2-partition") {
  auto chain = normalize_markov(affinity_from_dense(two_clique_kernel(5)));
  auto emb = full_embedding(chain);
  auto p = embed_kmeans(emb, chain.phi0, 2);
  for (int i = 1; i < 5; ++i) CHECK(p.assign[i] == p.assign[0]);
  for (int i = 6; i < 10; ++i) CHECK(p.assign[i] == p.assign[5]);
  CHECK(p.assign[0] != p.assign[5]);

  double best = 1e300;
  for (unsigned mask = 1; mask < (1u << 10) - 1; ++mask) {
    std::vector<std::size_t> a(10);
    for (int i = 0; i < 10; ++i) a[i] = (mask >> i) & 1u;
    best = std::min(best, make_partition(a, 2, emb.coords, chain.phi0).distortion);
  }
  CHECK(p.distortion <= best * (1 + 1e-12));

  std::vector<std::size_t> merged(10, 0);
  CHECK(make_partition(merged, 1, emb.coords, chain.phi0).distortion > p.distortion);
}

TEST_CASE("centroid and pairwise distortion agree") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    auto chain = normalize_markov(affinity_from_dense(random_kernel(20, rng)));
    SpectralOptions opt;
    opt.eigenpairs = 6;
    auto emb = spectral_decompose(chain, 5, 1, 0.01, opt);
    const std::size_t k = 2 + trial % 5;
    auto p = make_partition(random_assign(20, k, rng), k, emb.coords, chain.phi0);
    const double a = distortion(p, emb.coords, chain.phi0);
    const double b = distortion_pairwise(p, emb.coords, chain.phi0);
    CHECK(std::abs(a - b) <= 1e-9 * std::max(a, 1e-300));
    CHECK(std::abs(p.masses.sum() - 1.0) <= 1e-10);
  }
}

TEST_CASE("returned partition beats every restart and is reproducible") {
  std::mt19937_64 rng(3);
  auto chain = normalize_markov(affinity_from_dense(random_kernel(40, rng, 0.2)));
  SpectralOptions sopt;
  sopt.eigenpairs = 5;
  auto emb = spectral_decompose(chain, 4, 1, 0.01, sopt);
  KMeansOptions opt;
  opt.restarts = 12;
  opt.seed = 99;
  auto p = embed_kmeans(emb, chain.phi0, 4, opt);
  CHECK(p.restart_distortions.size() >= 12);
  for (double d : p.restart_distortions) CHECK(p.distortion <= d + 1e-15);
  for (std::size_t s : p.cluster_sizes()) CHECK(s > 0);
  CHECK(std::abs(p.distortion - distortion_pairwise(p, emb.coords, chain.phi0)) <=
        1e-9 * p.distortion);
  opt.threads = 4;
  auto q = embed_kmeans(emb, chain.phi0, 4, opt);
  CHECK(q.assign == p.assign);
  CHECK(q.distortion == p.distortion);
}

TEST_CASE("k-means argument checks") {
  Eigen::MatrixXd coords = Eigen::MatrixXd::Random(5, 2);
  Eigen::VectorXd phi0 = Eigen::VectorXd::Constant(5, 0.2);
  CHECK_THROWS_AS(embed_kmeans(coords, phi0, 6), Error);
  CHECK_THROWS_AS(embed_kmeans(coords, phi0, 1), Error);
  auto same = embed_kmeans(Eigen::MatrixXd::Ones(5, 2), phi0, 3);
  CHECK(same.coincident);
  CHECK(same.k == 1);
}

TEST_CASE("coarse graph of the singleton partition is the chain itself") {
  std::mt19937_64 rng(4);
  auto chain = normalize_markov(affinity_from_dense(random_kernel(9, rng)));
  auto emb = full_embedding(chain);
  std::vector<std::size_t> a(9);
  for (std::size_t i = 0; i < 9; ++i) a[i] = i;
  auto p = make_partition(a, 9, emb.coords, chain.phi0);
  auto g = coarse_graph(chain, emb, p, 1, 3);
  CHECK((g.transition - Eigen::MatrixXd(chain.transition)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("coarse chain invariants and residual bounds") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 6 + trial % 45;
    auto chain = normalize_markov(affinity_from_dense(random_kernel(n, rng, 0.3)));
    const int tau = 1 + trial % 2;
    auto emb = full_embedding(chain, tau);
    const std::size_t k = 2 + trial % 4;
    auto p = make_partition(random_assign(n, k, rng), k, emb.coords, chain.phi0);
    const std::size_t L = std::min<std::size_t>(4, n - 1);
    auto g = coarse_graph(chain, emb, p, tau, L);
    CHECK((g.weights - g.weights.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((g.transition.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-10);
    CHECK((g.mass.transpose() * g.transition - g.mass.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    for (std::size_t l = 0; l <= L; ++l) {
      CHECK(g.left_residual[l] <= 2 * g.distortion + 1e-9);
      CHECK(g.right_residual[l] <= 2 * g.distortion + 1e-9);
    }
  }
}

TEST_CASE("two-clique residuals are bounded by twice the distortion") {
  auto chain = normalize_markov(affinity_from_dense(two_clique_kernel(5)));
  auto emb = full_embedding(chain);
  std::vector<std::size_t> a(10);
  for (int i = 0; i < 10; ++i) a[i] = i < 5 ? 0 : 1;
  auto p = make_partition(a, 2, emb.coords, chain.phi0);
  auto g = coarse_graph(chain, emb, p, 1, 1);
  CHECK(g.left_residual[1] <= 2 * g.distortion);
  CHECK(g.right_residual[1] <= 2 * g.distortion);
  CHECK(g.distortion == doctest::Approx(p.distortion).epsilon(1e-9));
}

TEST_CASE("empty cluster is an input error") {
  std::mt19937_64 rng(6);
  auto chain = normalize_markov(affinity_from_dense(random_kernel(6, rng)));
  auto emb = full_embedding(chain);
  Partition p = make_partition({0, 0, 0, 1, 1, 1}, 2, emb.coords, chain.phi0);
  p.k = 3;
  try {
    coarse_graph(chain, emb, p, 1, 2);
    FAIL("expected an input error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Input);
  }
}

}
