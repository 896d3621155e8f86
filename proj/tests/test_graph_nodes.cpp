#include <doctest.h>

#include <cmath>
#include <random>

#include "dmseg/error.hpp"
#include "dmseg/graph_nodes.hpp"
#include "dmseg/phantom_eval.hpp"

using namespace dmseg;

namespace {

ImageSlice random_image(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageSlice img;
  img.rows = rows;
  img.cols = cols;
  img.intensities.resize(rows * cols);
  for (double& v : img.intensities) v = u(rng);
  return img;
}

Volume uniform_volume(std::size_t n, double value) {
  Volume v;
  v.nx = v.ny = v.nz = n;
  v.intensities.assign(n * n * n, value);
  return v;
}

}  // namespace

TEST_SUITE("graph_nodes") {

TEST_CASE("100x100 image in 10x10 blocks") {
  auto img = random_image(100, 100, 1);
  auto grid = window_nodes_2d(img, 10, 10);
  REQUIRE(grid.size() == 100);
  for (std::size_t a = 0; a < 10; ++a) {
    for (std::size_t b = 0; b < 10; ++b) {
      const Node& n = grid.nodes[a * 10 + b];
      CHECK(n.centroid[0] == doctest::Approx(4.5 + 10.0 * a));
      CHECK(n.centroid[1] == doctest::Approx(4.5 + 10.0 * b));
      CHECK(n.members.size() == 100);
    }
  }
}

TEST_CASE("node feature is the mean of its members") {
  auto img = random_image(53, 67, 2);
  auto grid = window_nodes_2d(img, 10, 10);
  std::size_t covered = 0;
  for (const Node& n : grid.nodes) {
    double sum = 0.0;
    for (std::size_t m : n.members) sum += img.intensities[m];
    CHECK(std::abs(n.features[0] - sum / static_cast<double>(n.members.size())) <= 1e-12);
    covered += n.members.size();
  }
  CHECK(covered == img.rows * img.cols);
}

TEST_CASE("edge blocks absorb the remainder and tile the image once") {
  auto img = random_image(25, 47, 3);
  auto grid = window_nodes_2d(img, 10, 20);
  CHECK(grid.size() == 2 * 2);
  std::vector<int> seen(img.rows * img.cols, 0);
  for (const Node& n : grid.nodes) {
    for (std::size_t m : n.members) ++seen[m];
  }
  for (int s : seen) CHECK(s == 1);
  CHECK(grid.nodes.back().members.size() == 15u * 27u);
}

TEST_CASE("constant image: feature 0.7 before normalization and 0 after") {
  ImageSlice img;
  img.rows = img.cols = 40;
  img.intensities.assign(1600, 0.7);
  auto grid = window_nodes_2d(img, 10, 10);
  for (const Node& n : grid.nodes) CHECK(n.features[0] == doctest::Approx(0.7));
  auto norm = normalize_features(grid);
  for (const Node& n : norm.nodes) CHECK(n.features[0] == 0.0);
}

TEST_CASE("stage block shapes") {
  auto img = random_image(40, 80, 4);
  auto thin = window_nodes_2d(img, 2, 20);
  CHECK(thin.size() == 20 * 4);
  CHECK(thin.block_shape[0] == 2);
  CHECK(thin.block_shape[1] == 20);
}

TEST_CASE("ROI mask drops blocks under a quarter inside") {
  auto img = random_image(40, 40, 5);
  Mask roi(1600, 0);
  // Rows 0..11 in: the second block row has 2 of 10 rows inside (20%).
  for (std::size_t r = 0; r < 12; ++r) {
    for (std::size_t c = 0; c < 40; ++c) roi[r * 40 + c] = 1;
  }
  WindowOptions opt;
  opt.roi = &roi;
  auto grid = window_nodes_2d(img, 10, 10, opt);
  CHECK(grid.size() == 4);
  for (const Node& n : grid.nodes) {
    for (std::size_t m : n.members) CHECK(roi[m] == 1);
  }
  Mask empty(1600, 0);
  opt.roi = &empty;
  CHECK_THROWS_AS(window_nodes_2d(img, 10, 10, opt), Error);
}

TEST_CASE("normalize features") {
  NodeGrid g;
  for (double f : {0.2, 0.6, 1.0}) g.nodes.push_back(Node{{}, {f}, {}});
  auto n = normalize_features(g);
  CHECK(n.nodes[0].features[0] == doctest::Approx(0.0));
  CHECK(n.nodes[1].features[0] == doctest::Approx(0.5));
  CHECK(n.nodes[2].features[0] == doctest::Approx(1.0));

  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-3.0, 5.0);
  NodeGrid r;
  for (int i = 0; i < 50; ++i) r.nodes.push_back(Node{{1.0 * i, 0, 0}, {u(rng), u(rng), 4.0}, {}});
  auto rn = normalize_features(r);
  for (std::size_t d = 0; d < 3; ++d) {
    double lo = 1e9, hi = -1e9;
    for (const Node& x : rn.nodes) {
      lo = std::min(lo, x.features[d]);
      hi = std::max(hi, x.features[d]);
    }
    if (d < 2) {
      CHECK(lo == 0.0);
      CHECK(hi == 1.0);
    } else {
      CHECK(hi == 0.0);
    }
  }
  for (int i = 0; i < 50; ++i) CHECK(rn.nodes[i].centroid[0] == 1.0 * i);
}

TEST_CASE("windowing is deterministic") {
  auto img = random_image(60, 70, 7);
  auto a = window_nodes_2d(img, 10, 10);
  auto b = window_nodes_2d(img, 10, 10);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.nodes[i].centroid == b.nodes[i].centroid);
    CHECK(a.nodes[i].features == b.nodes[i].features);
  }
}

TEST_CASE("30x30x30 volume in 10x10x10 cubes gives 27 nodes") {
  auto v = uniform_volume(30, 0.3);
  auto grid = window_nodes_3d(v, {10, 10, 10});
  CHECK(grid.size() == 27);
  CHECK(grid.dims == 3);
  auto prisms = window_nodes_3d(v, {15, 1, 15});
  CHECK(prisms.size() == 2 * 30 * 2);
}

TEST_CASE("masked cylinder removes the nodes inside it") {
  auto v = uniform_volume(30, 0.3);
  OnhMask m;
  m.found = true;
  m.nx = m.nz = 30;
  m.ellipse = Ellipse{15.0, 15.0, 9.0, 9.0, 0.0};
  m.xz.assign(900, 0);
  for (std::size_t z = 0; z < 30; ++z) {
    for (std::size_t x = 0; x < 30; ++x) m.xz[z * 30 + x] = m.ellipse.contains(x, z) ? 1 : 0;
  }
  const Mask keep = m.inclusion_mask(30);
  WindowOptions opt;
  opt.roi = &keep;
  auto grid = window_nodes_3d(v, {10, 10, 10}, opt);
  CHECK(grid.size() < 27);
  for (const Node& n : grid.nodes) {
    CHECK_FALSE(m.ellipse.contains(n.centroid[0], n.centroid[2]));
    for (std::size_t i : n.members) CHECK(keep[i] == 1);
  }
}

TEST_CASE("uniform volume has no canal") {
  auto v = uniform_volume(30, 0.5);
  CHECK_FALSE(onh_mask(v).found);
}

TEST_CASE("canal phantom: ellipse fit and coverage") {
  PhantomSpec spec;
  spec.nx = 96;
  spec.ny = 200;
  spec.nz = 64;
  spec.base_row = 20.0;
  spec.wave_amplitude = 0.0;
  spec.dip_fraction = 0.0;
  spec.drift = spec.drift_z = 0.0;
  spec.canal = CanalSpec{50.0, 30.0, 14.0, 9.0, 0.3, 0.02};
  const Phantom ph = generate_phantom(spec, 11);
  const OnhMask m = onh_mask(ph.volume);
  REQUIRE(m.found);
  CHECK(std::hypot(m.ellipse.center_x - 50.0, m.ellipse.center_z - 30.0) <= 3.0);
  CHECK(std::abs(m.ellipse.semi_major - 14.0) <= 0.2 * 14.0);
  CHECK(std::abs(m.ellipse.semi_minor - 9.0) <= 0.2 * 9.0);
  const Ellipse truth{50.0, 30.0, 14.0, 9.0, 0.3};
  std::size_t inside = 0, excluded = 0;
  for (std::size_t z = 0; z < spec.nz; ++z) {
    for (std::size_t x = 0; x < spec.nx; ++x) {
      if (!truth.contains(x, z)) continue;
      ++inside;
      excluded += m.xz[z * spec.nx + x];
    }
  }
  CHECK(static_cast<double>(excluded) >= 0.95 * static_cast<double>(inside));
}

TEST_CASE("image and volume validation") {
  ImageSlice small;
  small.rows = small.cols = 10;
  small.intensities.assign(100, 0.5);
  CHECK_THROWS_AS(validate(small), Error);
  auto img = random_image(30, 30, 8);
  img.intensities[5] = 1.5;
  CHECK_THROWS_AS(validate(img), Error);
  auto v = uniform_volume(10, 0.5);
  CHECK_THROWS_AS(validate(v), Error);
}

}  // TEST_SUITE
