#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "dmseg/phantom_eval.hpp"

namespace dmseg {

namespace {

void check_spec(const PhantomSpec& spec) {
  require(spec.nx >= 20 && spec.ny >= 20 && spec.nz >= 1, ErrorCode::Parameter,
          fmt::format("phantom dims {}x{}x{} too small", spec.nx, spec.ny, spec.nz));
  for (double t : spec.thickness) {
    require(t >= 0.0 && std::isfinite(t), ErrorCode::Parameter,
            "band thickness must be finite and non-negative");
  }
  for (double v : spec.intensity) {
    require(v >= 0.0 && v <= 1.0, ErrorCode::Parameter, "band intensity outside [0, 1]");
  }
  require(spec.noise_sigma >= 0.0 && spec.speckle_shape >= 0.0, ErrorCode::Parameter,
          "noise parameters must be non-negative");
  require(spec.dip_fraction >= 0.0 && spec.dip_fraction < 1.0, ErrorCode::Parameter,
          "dip fraction must lie in [0, 1)");
  require(spec.wave_period > 0.0 && spec.dip_sigma > 0.0 && spec.dip_sigma_z > 0.0,
          ErrorCode::Parameter, "wave period and dip widths must be positive");
  for (const auto& v : spec.vessels) {
    require(v.width > 0.0 && v.attenuation >= 0.0 && v.attenuation <= 1.0, ErrorCode::Parameter,
            "vessel shadow needs a positive width and an attenuation in [0, 1]");
  }
}

// Overlap of [a, b) with the pixel extent [r - 0.5, r + 0.5).
double overlap(double a, double b, double r) {
  return std::max(0.0, std::min(b, r + 0.5) - std::max(a, r - 0.5));
}

bool visible(const PhantomSpec& spec, std::size_t s) {
  return spec.intensity[s] != spec.intensity[s + 1];
}

}  // namespace

std::array<double, kSurfaceCount> phantom_surfaces(const PhantomSpec& spec, double x, double z) {
  const double nxd = static_cast<double>(spec.nx);
  const double nzd = static_cast<double>(spec.nz);
  double inner = 0.0;
  for (std::size_t i = 0; i < 7; ++i) inner += spec.thickness[i];

  const double dx = x - spec.dip_center_x * (nxd - 1.0);
  double g = std::exp(-0.5 * dx * dx / (spec.dip_sigma * spec.dip_sigma));
  if (spec.nz > 1) {
    const double dz = z - spec.dip_center_z * (nzd - 1.0);
    g *= std::exp(-0.5 * dz * dz / (spec.dip_sigma_z * spec.dip_sigma_z));
  }
  double s7 = spec.base_row + inner +
              spec.wave_amplitude *
                  std::sin(2.0 * std::numbers::pi * x / spec.wave_period + spec.wave_phase) +
              spec.drift * x + spec.drift_z * z;
  if (spec.bump) {
    const auto& b = *spec.bump;
    const double bx = (x - b.center_x) / b.sigma_x;
    const double bz = (z - b.center_z) / b.sigma_z;
    s7 -= b.amplitude * std::exp(-0.5 * (bx * bx + bz * bz));
  }

  std::array<double, kSurfaceCount> rows{};
  rows[kS7] = s7;
  const double scale = 1.0 - spec.dip_fraction * g;
  for (std::size_t s = kS7; s-- > 0;) rows[s] = rows[s + 1] - spec.thickness[s] * scale;
  for (std::size_t s = kS7 + 1; s < kSurfaceCount; ++s) rows[s] = rows[s - 1] + spec.thickness[s - 1];
  return rows;
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  Phantom ph;
  ph.spec = spec;
  ph.seed = seed;
  Volume& vol = ph.volume;
  vol.nx = spec.nx;
  vol.ny = spec.ny;
  vol.nz = spec.nz;
  vol.spacing_um = spec.spacing_um;
  vol.intensities.assign(spec.nx * spec.ny * spec.nz, 0.0);

  SurfaceSet& truth = ph.truth;
  truth = SurfaceSet(spec.nx, spec.nz);
  truth.axial_um = spec.spacing_um[1];
  truth.lateral_um = spec.spacing_um[0];
  truth.slice_um = spec.spacing_um[2];
  for (std::size_t s = 0; s < kSurfaceCount; ++s) {
    if (visible(spec, s)) truth.emplace(s, Provenance::Clustered);
  }

  std::optional<Ellipse> canal;
  if (spec.canal) {
    canal = Ellipse{spec.canal->center_x, spec.canal->center_z, spec.canal->semi_major,
                    spec.canal->semi_minor, spec.canal->angle};
  }

  for (std::size_t z = 0; z < spec.nz; ++z) {
    for (std::size_t x = 0; x < spec.nx; ++x) {
      const auto rows = phantom_surfaces(spec, static_cast<double>(x), static_cast<double>(z));
      for (std::size_t s = 1; s < kSurfaceCount; ++s) {
        require(rows[s] - rows[s - 1] >= 0.0, ErrorCode::Parameter, "phantom bands cross");
      }
      const bool in_canal =
          canal && canal->contains(static_cast<double>(x), static_cast<double>(z));
      double shade = 1.0;
      for (const auto& v : spec.vessels) {
        if (std::abs(static_cast<double>(x) - v.center_x) < 0.5 * v.width) {
          shade = std::min(shade, v.attenuation);
        }
      }
      for (std::size_t y = 0; y < spec.ny; ++y) {
        const double r = static_cast<double>(y);
        double value = 0.0;
        if (in_canal) {
          value = spec.canal->intensity;
        } else {
          double top = -std::numeric_limits<double>::infinity();
          for (std::size_t band = 0; band <= kSurfaceCount; ++band) {
            const double bottom =
                band < kSurfaceCount ? rows[band] : std::numeric_limits<double>::infinity();
            const double w = overlap(top, bottom, r);
            if (w > 0.0) {
              const double gain = band == 0 ? 1.0 : shade;
              value += w * spec.intensity[band] * gain;
            }
            top = bottom;
          }
        }
        vol.at(x, y, z) = value;
      }
      for (std::size_t s = 0; s < kSurfaceCount; ++s) {
        if (!truth.has(s)) continue;
        truth.at(s).rows[truth.index(x, z)] =
            in_canal ? std::numeric_limits<double>::quiet_NaN() : rows[s];
      }
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const bool speckle = spec.speckle_shape > 0.0;
  std::gamma_distribution<double> gamma(speckle ? spec.speckle_shape : 1.0,
                                        speckle ? 1.0 / spec.speckle_shape : 1.0);
  for (double& v : vol.intensities) {
    if (speckle) v *= gamma(rng);
    if (spec.noise_sigma > 0.0) v += spec.noise_sigma * gauss(rng);
    v = std::clamp(v, 0.0, 1.0);
  }
  return ph;
}

PhantomSpec standard_phantom_spec() { return PhantomSpec{}; }

PhantomSpec normal_phantom_spec() {
  PhantomSpec spec;
  spec.intensity[2] = 0.26;               // clear ganglion cell layer
  spec.intensity[7] = spec.intensity[6];  // no visible boundary 6a
  return spec;
}

PhantomSpec merged_phantom_spec() {
  PhantomSpec spec;
  spec.intensity[3] = spec.intensity[2];  // ganglion + inner plexiform
  spec.intensity[4] = spec.intensity[5];  // inner nuclear + outer plexiform
  return spec;
}

PhantomSpec volume_phantom_spec() {
  PhantomSpec spec;
  spec.nx = 128;
  spec.ny = 512;
  spec.nz = 128;
  spec.wave_period = 160.0;
  spec.dip_sigma = 14.0;
  spec.dip_sigma_z = 14.0;
  spec.drift = 0.08;
  spec.drift_z = 0.08;
  return spec;
}

}  // namespace dmseg
