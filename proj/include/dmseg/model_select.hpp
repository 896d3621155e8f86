#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "dmseg/graph_nodes.hpp"

namespace dmseg {

/// Kernel scale as a fixed fraction of a distance range.
double default_sigma(double distance_min, double distance_max, double factor = 0.15);

struct SigmaScan {
  std::vector<double> sigma_grid;
  std::vector<double> L_values;  // sum of kernel entries over within-radius ordered pairs
  std::vector<double> slopes;    // d log L / d log sigma between consecutive grid points
  double chosen_sigma = 0.0;     // geometric centre of the linear region
  std::size_t lo = 0;            // linear region, inclusive grid indices
  std::size_t hi = 0;
  double default_sigma = 0.0;
  bool default_in_region = false;
};

struct SigmaScanOptions {
  std::array<double, 3> axis_scale{1.0, 1.0, 1.0};
  double slope_fraction = 0.75;  // slopes at least this fraction of the maximum count as linear
  double default_factor = 0.15;
  int threads = 1;
};

/// Log-plot scan of L(sigma) for the feature-only kernel restricted to the radius.
SigmaScan scan_sigma(const NodeGrid& nodes, const std::vector<double>& sigma_grid, double radius,
                     const SigmaScanOptions& options = {});

/// Geometrically spaced grid from lo to hi (inclusive).
std::vector<double> log_grid(double lo, double hi, std::size_t count);

struct ClusterCountEstimate {
  Eigen::VectorXd eigenvalues;  // descending, trivial first
  Eigen::VectorXd magnified;    // lambda / (lambda - 1), for plotting only
  std::size_t elbow_index = 0;
  std::size_t k = 0;
  double confidence = 0.0;      // drop ratio at the elbow
};

struct ElbowOptions {
  double epsilon = 1e-6;
  double flat_tolerance = 1e-9;
};

/// Eigenvalue elbow: the index after which the spectrum drop is largest
/// relative to the next drop. Returns k = index + 1.
ClusterCountEstimate estimate_k(const Eigen::VectorXd& eigenvalues, const ElbowOptions& options = {});

}  // namespace dmseg
