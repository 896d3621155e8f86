#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "dmseg/graph_nodes.hpp"
#include "dmseg/surfaces.hpp"

namespace dmseg {

struct VesselShadow {
  double center_x = 0.0;     // column
  double width = 6.0;        // px
  double attenuation = 0.4;  // intensity factor below surface 1
};

struct CanalSpec {
  double center_x = 0.0;
  double center_z = 0.0;
  double semi_major = 10.0;
  double semi_minor = 8.0;
  double angle = 0.0;
  double intensity = 0.02;
};

/// Localized elevation of every surface, sharp along z.
struct BumpSpec {
  double center_x = 0.0;
  double center_z = 0.0;
  double sigma_x = 40.0;
  double sigma_z = 1.5;
  double amplitude = 12.0;  // px, positive moves surfaces up (towards row 0)
};

struct PhantomSpec {
  std::size_t nx = 650;  // columns
  std::size_t ny = 512;  // rows (depth)
  std::size_t nz = 1;    // slices
  std::array<double, 3> spacing_um{13.67, 4.81, 24.41};

  double base_row = 150.0;  // surface 1 away from the foveal dip
  // Band thickness between consecutive surfaces 1|2, 2|3, ..., 10|11.
  std::array<double, 11> thickness{20, 16, 16, 16, 16, 22, 14, 8, 8, 8, 8};
  // Band intensities from above surface 1 down to below surface 11.
  std::array<double, 13> intensity{0.02, 0.55, 0.32, 0.44, 0.24, 0.46, 0.18,
                                   0.38, 0.95, 0.60, 0.95, 0.60, 0.85};

  double noise_sigma = 0.05;
  double speckle_shape = 4.0;  // gamma shape of the multiplicative gain; 0 disables

  double wave_amplitude = 3.0;   // px
  double wave_period = 420.0;    // px along x
  double wave_phase = 0.7;       // radians
  double dip_fraction = 0.15;    // inner bands thin by this fraction at the fovea
  double dip_sigma = 80.0;       // px (x) of the Gaussian dip
  double dip_center_x = 0.5;     // fraction of nx
  double dip_center_z = 0.5;     // fraction of nz
  double dip_sigma_z = 4.0;      // slices
  double drift = 0.02;           // px per column
  double drift_z = 0.1;          // px per slice

  std::vector<VesselShadow> vessels;
  std::optional<CanalSpec> canal;
  std::optional<BumpSpec> bump;
};

struct Phantom {
  PhantomSpec spec;
  std::uint64_t seed = 0;
  Volume volume;
  SurfaceSet truth;  // visible surfaces only, NaN inside a canal
};

/// Exact (noise-free) surface rows at column x of slice z, all twelve.
std::array<double, kSurfaceCount> phantom_surfaces(const PhantomSpec& spec, double x, double z);

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// Named variants used by the tests and the CLI.
PhantomSpec standard_phantom_spec();
PhantomSpec normal_phantom_spec();   // boundary 6a invisible, all inner interfaces clear
PhantomSpec merged_phantom_spec();   // two inner bands share an intensity
PhantomSpec volume_phantom_spec();   // 128 x 512 x 128

struct SurfaceError {
  std::size_t surface = 0;
  std::size_t samples = 0;
  std::size_t missing = 0;  // truth defined, prediction undefined
  double signed_mean_px = 0.0;
  double signed_sd_px = 0.0;
  double unsigned_mean_px = 0.0;
  double unsigned_sd_px = 0.0;
  double signed_mean_um = 0.0;
  double signed_sd_um = 0.0;
  double unsigned_mean_um = 0.0;
  double unsigned_sd_um = 0.0;
};

struct ThicknessError {
  std::size_t surface = 0;
  std::size_t samples = 0;
  double mean_px = 0.0;
  double mean_um = 0.0;
};

struct ErrorReport {
  double axial_um = 1.0;
  std::vector<SurfaceError> surfaces;
  SurfaceError overall;
  std::vector<ThicknessError> thickness;
};

/// Signed error is prediction minus truth (positive: predicted deeper).
ErrorReport border_errors(const SurfaceSet& pred, const SurfaceSet& truth, double axial_um);

std::vector<ThicknessError> thickness_errors(const SurfaceSet& pred, const SurfaceSet& truth,
                                             double axial_um);

/// Mean unsigned error in px over the listed surfaces (pooled samples).
double mean_unsigned_px(const ErrorReport& report, const std::vector<std::size_t>& surfaces);

}  // namespace dmseg
