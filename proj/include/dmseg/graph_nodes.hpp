#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace dmseg {

/// Grayscale B-scan. Row index grows with depth (downwards).
struct ImageSlice {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> intensities;  // row-major, values in [0, 1]
  double axial_um = 1.0;            // micrometres per row
  double lateral_um = 1.0;          // micrometres per column

  double at(std::size_t r, std::size_t c) const { return intensities[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return intensities[r * cols + c]; }
};

/// Volume with x (lateral) fastest, then y (depth), then z (slice index).
struct Volume {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;
  std::vector<double> intensities;
  std::array<double, 3> spacing_um{1.0, 1.0, 1.0};

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return (z * ny + y) * nx + x;
  }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return intensities[index(x, y, z)];
  }
  double& at(std::size_t x, std::size_t y, std::size_t z) { return intensities[index(x, y, z)]; }

  /// x-y plane at slice z as a 2D image (rows = y, cols = x).
  ImageSlice slice(std::size_t z) const;
};

void validate(const ImageSlice& slice);
void validate(const Volume& volume);

/// Per-pixel (2D) or per-voxel (3D) inclusion mask, same layout as the image.
using Mask = std::vector<std::uint8_t>;

struct Node {
  // 2D: {row, col, 0}; 3D: {x, y, z}. Pixel units.
  std::array<double, 3> centroid{};
  std::vector<double> features;
  std::vector<std::size_t> members;  // linear pixel/voxel indices
};

/// Computes a feature vector from the intensities of one block's members.
using FeatureExtractor = std::function<std::vector<double>(std::span<const double>)>;

std::vector<double> mean_gray_feature(std::span<const double> values);

struct NodeGrid {
  int dims = 2;
  std::array<std::size_t, 3> domain{};       // 2D: {rows, cols, 1}; 3D: {nx, ny, nz}
  std::array<std::size_t, 3> block_shape{};  // 2D: {h, w, 1}; 3D: {bx, by, bz}
  std::vector<Node> nodes;

  std::size_t size() const { return nodes.size(); }
  std::size_t feature_dims() const { return nodes.empty() ? 0 : nodes.front().features.size(); }
};

struct WindowOptions {
  const Mask* roi = nullptr;              // nullptr: whole domain
  double min_inside_fraction = 0.25;      // blocks below this coverage are dropped
  FeatureExtractor features = mean_gray_feature;
};

NodeGrid window_nodes_2d(const ImageSlice& slice, std::size_t block_h, std::size_t block_w,
                         const WindowOptions& options = {});

NodeGrid window_nodes_3d(const Volume& volume, std::array<std::size_t, 3> block,
                         const WindowOptions& options = {});

/// Min-max rescales every feature dimension to [0, 1]; constant dimensions map to 0.
NodeGrid normalize_features(NodeGrid grid);

/// Elliptical exclusion footprint in the x-z plane.
struct Ellipse {
  double center_x = 0.0;
  double center_z = 0.0;
  double semi_major = 0.0;
  double semi_minor = 0.0;
  double angle = 0.0;  // radians, major axis measured from +x towards +z

  bool contains(double x, double z) const;
};

struct OnhMask {
  bool found = false;          // false: nothing excluded
  Ellipse ellipse;
  std::vector<std::uint8_t> xz;  // nx * nz, 1 = inside the canal
  std::size_t nx = 0;
  std::size_t nz = 0;

  /// Volume-shaped inclusion mask (1 = keep) for use as a window ROI.
  Mask inclusion_mask(std::size_t ny) const;
};

/// Locates a dark canal in the mean-over-depth projection and returns the
/// elliptical cylinder covering it.
OnhMask onh_mask(const Volume& volume);

}  // namespace dmseg
