#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dmseg/curves.hpp"
#include "dmseg/error.hpp"
#include "dmseg/phantom_eval.hpp"

using namespace dmseg;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Dark above `edge`, bright below, optional Gaussian noise.
ImageSlice step_image(std::size_t rows, std::size_t cols, const std::vector<double>& edge,
                      double noise = 0.0, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise > 0.0 ? noise : 1.0);
  ImageSlice img;
  img.rows = rows;
  img.cols = cols;
  img.intensities.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double rr = static_cast<double>(r);
      // Pixel r covers [r - 0.5, r + 0.5].
      const double below = std::clamp(rr + 0.5 - edge[c], 0.0, 1.0);
      double v = 0.2 + 0.6 * below;
      if (noise > 0.0) v += n(rng);
      img.at(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

PhantomSpec flat_spec() {
  PhantomSpec s;
  s.nx = 120;
  s.ny = 400;
  s.noise_sigma = 0.0;
  s.speckle_shape = 0.0;
  s.wave_amplitude = 0.0;
  s.dip_fraction = 0.0;
  s.drift = 0.0;
  return s;
}

}  // namespace

TEST_SUITE("curves") {

TEST_CASE("straight line is reproduced") {
  std::vector<double> pts(200);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = 40.0 + 0.3 * static_cast<double>(i);
  auto out = smooth_curve(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(out[i] - pts[i]) <= 1e-6);
}

TEST_CASE("parabola with one 50 px outlier") {
  std::vector<double> pts(300), truth(300);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x = (static_cast<double>(i) - 150.0) / 150.0;
    truth[i] = pts[i] = 100.0 + 30.0 * x * x;
  }
  pts[120] += 50.0;
  auto out = smooth_curve(pts);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(out[i] - truth[i]) <= 1.0);
}

TEST_CASE("a 40 column gap is filled continuously") {
  std::vector<double> pts(150);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = 60.0 + 0.1 * static_cast<double>(i);
  for (std::size_t i = 50; i < 90; ++i) pts[i] = kNaN;
  auto out = smooth_curve(pts);
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(std::isfinite(out[i]));
    if (i > 0) CHECK(std::abs(out[i] - out[i - 1]) < 1.0);
  }
}

TEST_CASE("fewer than four points is an input error") {
  std::vector<double> pts(20, kNaN);
  pts[3] = 1.0;
  pts[9] = 2.0;
  pts[15] = 3.0;
  CHECK_THROWS_AS(smooth_curve(pts), Error);
}

TEST_CASE("fill_gaps interpolates and holds the ends") {
  auto out = fill_gaps({kNaN, 2.0, kNaN, kNaN, 5.0, kNaN});
  CHECK(out == std::vector<double>{2.0, 2.0, 3.0, 4.0, 5.0, 5.0});
}

TEST_CASE("noiseless step: refined to the edge") {
  const std::size_t cols = 80;
  std::vector<double> edge(cols, 40.0), start(cols, 35.0);
  auto img = step_image(100, cols, edge);
  auto res = gradient_refine(img, start, EdgePolarity::Brightening);
  for (double r : res.rows) CHECK(std::abs(r - 40.0) <= 1.0);
  CHECK(res.clamped_columns == 0);
}

TEST_CASE("noisy step: within 1 px on at least 95% of columns") {
  const std::size_t cols = 300;
  std::vector<double> edge(cols), start(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    edge[c] = 60.0 + 8.0 * std::sin(static_cast<double>(c) / 50.0);
    start[c] = edge[c] - 4.0;
  }
  auto img = step_image(140, cols, edge, 0.05, 3);
  auto res = gradient_refine(img, start, EdgePolarity::Brightening);
  std::size_t good = 0;
  for (std::size_t c = 0; c < cols; ++c) good += std::abs(res.rows[c] - edge[c]) <= 1.0;
  CHECK(static_cast<double>(good) >= 0.95 * cols);
}

TEST_CASE("search window cut by the border is counted") {
  std::vector<double> edge(40, 5.0), start(40, 3.0);
  auto img = step_image(60, 40, edge);
  auto res = gradient_refine(img, start, EdgePolarity::Brightening);
  CHECK(res.clamped_columns == 40);
}

TEST_CASE("default search window is ten rows") {
  GradientSearchOptions o;
  CHECK(o.half_window == 10);
}

TEST_CASE("outer surfaces on a flat noiseless phantom") {
  const PhantomSpec spec = flat_spec();
  const Phantom ph = generate_phantom(spec, 1);
  const ImageSlice img = ph.volume.slice(0);
  const auto truth = phantom_surfaces(spec, 0.0, 0.0);
  std::vector<double> s7(spec.nx, truth[kS7]);
  auto outer = detect_outer_surfaces(img, s7);
  REQUIRE(outer.rows.size() == 4);
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t c = 0; c < spec.nx; ++c) {
      CHECK(std::abs(outer.rows[j][c] - truth[kS8 + j]) <= 1.0);
      const double above = j == 0 ? s7[c] : outer.rows[j - 1][c];
      CHECK(outer.rows[j][c] >= above);
    }
  }
}

TEST_CASE("flattening") {
  SUBCASE("flat surface gives zero shifts") {
    std::vector<double> s10(50, 123.4);
    auto rec = alignment_for(s10);
    for (int s : rec.shifts) CHECK(s == 0);
    CHECK(rec.target == 123);
  }
  SUBCASE("tilted phantom aligns within a pixel and inverts exactly") {
    PhantomSpec spec = flat_spec();
    spec.drift = 0.1;
    const Phantom ph = generate_phantom(spec, 1);
    const ImageSlice img = ph.volume.slice(0);
    const auto& s10 = ph.truth.at(kS10).rows;
    auto rec = alignment_for(s10);
    auto aligned_rows = to_aligned(s10, rec);
    for (double r : aligned_rows) CHECK(std::abs(r - rec.target) <= 1.0);
    CHECK(from_aligned(aligned_rows, rec) == s10);

    auto flat = flatten(img, rec);
    auto back = unflatten(flat, rec);
    for (std::size_t c = 0; c < img.cols; ++c) {
      for (std::size_t r = 0; r < img.rows; ++r) {
        const long src = static_cast<long>(r) + rec.shifts[c];
        if (src < 0 || src >= static_cast<long>(img.rows)) continue;
        CHECK(back.at(r, c) == img.at(r, c));
      }
    }
    // Idempotent: the flattened surface needs no further shift.
    auto again = alignment_for(aligned_rows);
    for (int s : again.shifts) CHECK(std::abs(s) <= 1);
  }
}

TEST_CASE("cluster edges of a single block") {
  NodeGrid grid;
  grid.dims = 2;
  grid.domain = {60, 30, 1};
  grid.block_shape = {10, 10, 1};
  Node n;
  for (std::size_t r = 20; r < 30; ++r) {
    for (std::size_t c = 10; c < 20; ++c) n.members.push_back(r * 30 + c);
  }
  grid.nodes = {n, Node{}};
  grid.nodes[1].members = {0};
  Partition p;
  p.k = 3;
  p.assign = {1, 0};
  auto e = extract_cluster_edges(p, grid, 1);
  for (std::size_t c = 0; c < 30; ++c) {
    if (c >= 10 && c < 20) {
      CHECK(e.top[c] == 20.0);
      CHECK(e.bottom[c] == 29.0);
    } else {
      CHECK(std::isnan(e.top[c]));
    }
  }
  auto empty = extract_cluster_edges(p, grid, 2);
  for (double v : empty.top) CHECK(std::isnan(v));
}

TEST_CASE("split column") {
  std::vector<double> dip(300);
  for (std::size_t c = 0; c < 300; ++c) {
    dip[c] = 100.0 + 20.0 * std::exp(-std::pow((static_cast<double>(c) - 150.0) / 20.0, 2));
  }
  CHECK(split_left_right(dip) == 150);
  std::vector<double> mono(300);
  for (std::size_t c = 0; c < 300; ++c) mono[c] = 100.0 + 0.1 * static_cast<double>(c);
  CHECK(split_left_right(mono) == 150);
  CHECK(split_left_right(std::vector<double>(301, 80.0)) == 150);
}

}  // TEST_SUITE
