#include <doctest.h>

#include <cmath>
#include <random>

#include "dmseg/error.hpp"
#include "dmseg/phantom_eval.hpp"

using namespace dmseg;

namespace {

SurfaceSet random_set(std::size_t cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 5.0);
  SurfaceSet s(cols, 1);
  std::vector<double> rows(cols);
  double base = 50.0;
  for (std::size_t i = 0; i < kSurfaceCount; ++i) {
    base += 10.0;
    for (std::size_t c = 0; c < cols; ++c) rows[c] = base + u(rng);
    s.set(i, rows, Provenance::Clustered);
  }
  return s;
}

SurfaceSet perturbed(const SurfaceSet& t, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> n(0.3, sd);
  SurfaceSet p = t;
  for (std::size_t s : p.present()) {
    for (double& r : p.at(s).rows) r += n(rng);
  }
  return p;
}

// Naive double-loop references.
struct Naive {
  double signed_mean, signed_sd, unsigned_mean, unsigned_sd;
};

Naive naive_border(const std::vector<double>& p, const std::vector<double>& t) {
  double n = 0, ss = 0, su = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    n += 1;
    ss += p[i] - t[i];
    su += std::abs(p[i] - t[i]);
  }
  const double ms = ss / n, mu = su / n;
  double vs = 0, vu = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    vs += (p[i] - t[i] - ms) * (p[i] - t[i] - ms);
    vu += (std::abs(p[i] - t[i]) - mu) * (std::abs(p[i] - t[i]) - mu);
  }
  return {ms, std::sqrt(vs / (n - 1)), mu, std::sqrt(vu / (n - 1))};
}

double naive_thickness(const SurfaceSet& p, const SurfaceSet& t, std::size_t s) {
  double sum = 0;
  for (std::size_t c = 0; c < p.cols; ++c) {
    sum += std::abs((p.at(s).rows[c] - p.at(0).rows[c]) - (t.at(s).rows[c] - t.at(0).rows[c]));
  }
  return sum / static_cast<double>(p.cols);
}

}  // namespace

TEST_SUITE("phantom_eval") {

TEST_CASE("flat noiseless phantom matches its band geometry exactly") {
  PhantomSpec spec;
  spec.nx = 64;
  spec.noise_sigma = 0.0;
  spec.speckle_shape = 0.0;
  spec.wave_amplitude = 0.0;
  spec.dip_fraction = 0.0;
  spec.drift = 0.0;
  spec.base_row = 100.0;
  const Phantom ph = generate_phantom(spec, 5);
  double row = spec.base_row;
  const std::size_t col = 17;
  for (std::size_t s = 0; s < kSurfaceCount; ++s) {
    if (s > 0) row += spec.thickness[s - 1];
    REQUIRE(ph.truth.has(s));
    CHECK(ph.truth.at(s).rows[col] == doctest::Approx(row));
  }
  // Edge rows recomputed from the image: the first row whose value changes.
  const ImageSlice img = ph.volume.slice(0);
  row = spec.base_row;
  for (std::size_t s = 0; s < kSurfaceCount; ++s) {
    if (s > 0) row += spec.thickness[s - 1];
    const auto r = static_cast<std::size_t>(row);
    CHECK(img.at(r - 1, col) == doctest::Approx(spec.intensity[s]));
    CHECK(img.at(r, col) != doctest::Approx(spec.intensity[s]));
  }
}

TEST_CASE("merged bands hide one surface") {
  const Phantom standard = generate_phantom(standard_phantom_spec(), 1);
  const Phantom merged = generate_phantom(merged_phantom_spec(), 1);
  CHECK(merged.truth.count() < standard.truth.count());
  PhantomSpec one = standard_phantom_spec();
  one.intensity[4] = one.intensity[3];
  CHECK(generate_phantom(one, 1).truth.count() == standard.truth.count() - 1);
}

TEST_CASE("phantoms are deterministic per seed and intensities are clipped") {
  const PhantomSpec spec = standard_phantom_spec();
  const Phantom a = generate_phantom(spec, 9);
  const Phantom b = generate_phantom(spec, 9);
  const Phantom c = generate_phantom(spec, 10);
  CHECK(a.volume.intensities == b.volume.intensities);
  CHECK(a.volume.intensities != c.volume.intensities);
  for (double v : a.volume.intensities) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
  CHECK(is_ordered(a.truth));
}

TEST_CASE("crossing bands are rejected") {
  PhantomSpec spec;
  spec.thickness[3] = -5.0;
  CHECK_THROWS_AS(generate_phantom(spec, 1), Error);
}

TEST_CASE("pred equal to truth gives zeros") {
  std::mt19937_64 rng(1);
  const SurfaceSet t = random_set(40, rng);
  const ErrorReport r = border_errors(t, t, 4.81);
  CHECK(r.overall.unsigned_mean_px == 0.0);
  CHECK(r.overall.signed_mean_um == 0.0);
  for (const auto& t2 : r.thickness) CHECK(t2.mean_um == 0.0);
}

TEST_CASE("uniform 3 px shift") {
  std::mt19937_64 rng(2);
  const SurfaceSet t = random_set(40, rng);
  SurfaceSet p = t;
  for (std::size_t s : p.present()) {
    for (double& r : p.at(s).rows) r += 3.0;
  }
  const ErrorReport r = border_errors(p, t, 4.81);
  for (const auto& e : r.surfaces) {
    CHECK(e.signed_mean_um == doctest::Approx(14.43));
    CHECK(e.unsigned_mean_um == doctest::Approx(14.43));
  }
  for (const auto& e : thickness_errors(p, t, 4.81)) CHECK(e.mean_um == doctest::Approx(0.0));
}

TEST_CASE("surface 7 off by 2 px only") {
  std::mt19937_64 rng(3);
  const SurfaceSet t = random_set(40, rng);
  SurfaceSet p = t;
  for (double& r : p.at(kS7).rows) r += 2.0;
  for (const auto& e : thickness_errors(p, t, 4.81)) {
    CHECK(e.mean_um == doctest::Approx(e.surface == kS7 ? 9.62 : 0.0));
  }
}

TEST_CASE("agreement with the naive reference and metric properties") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const SurfaceSet t = random_set(37, rng);
    const SurfaceSet p = perturbed(t, rng, 1.5);
    const double um = 4.81;
    const ErrorReport r = border_errors(p, t, um);
    const ErrorReport back = border_errors(t, p, um);
    REQUIRE(r.surfaces.size() == kSurfaceCount);
    for (std::size_t i = 0; i < r.surfaces.size(); ++i) {
      const auto& e = r.surfaces[i];
      const Naive n = naive_border(p.at(e.surface).rows, t.at(e.surface).rows);
      CHECK(std::abs(e.signed_mean_px - n.signed_mean) <= 1e-12);
      CHECK(std::abs(e.signed_sd_px - n.signed_sd) <= 1e-12);
      CHECK(std::abs(e.unsigned_mean_px - n.unsigned_mean) <= 1e-12);
      CHECK(std::abs(e.unsigned_sd_px - n.unsigned_sd) <= 1e-12);
      CHECK(std::abs(e.unsigned_mean_um - um * n.unsigned_mean) <= 1e-12);
      CHECK(e.unsigned_mean_px >= std::abs(e.signed_mean_px));
      CHECK(back.surfaces[i].unsigned_mean_px == doctest::Approx(e.unsigned_mean_px));
      CHECK(back.surfaces[i].signed_mean_px == doctest::Approx(-e.signed_mean_px));
    }
    for (const auto& th : r.thickness) {
      CHECK(std::abs(th.mean_px - naive_thickness(p, t, th.surface)) <= 1e-12);
      const double bound = r.surfaces[th.surface].unsigned_mean_um + r.surfaces[0].unsigned_mean_um;
      CHECK(th.mean_um <= bound + 1e-12);
    }
  }
}

TEST_CASE("missing predictions are excluded and counted") {
  std::mt19937_64 rng(5);
  const SurfaceSet t = random_set(20, rng);
  SurfaceSet p = t;
  p.at(kS3).rows[4] = std::nan("");
  p.at(kS3).rows[5] = std::nan("");
  const ErrorReport r = border_errors(p, t, 1.0);
  CHECK(r.surfaces[kS3].missing == 2);
  CHECK(r.surfaces[kS3].samples == 18);
}

TEST_CASE("disjoint domains are an input error") {
  std::mt19937_64 rng(6);
  const SurfaceSet a = random_set(20, rng);
  const SurfaceSet b = random_set(25, rng);
  CHECK_THROWS_AS(border_errors(a, b, 1.0), Error);
}

}  // TEST_SUITE
