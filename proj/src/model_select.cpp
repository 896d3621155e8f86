#include "dmseg/model_select.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "dmseg/parallel.hpp"
#include "dmseg/spectral.hpp"

namespace dmseg {

double default_sigma(double distance_min, double distance_max, double factor) {
  require(std::isfinite(distance_min) && std::isfinite(distance_max) && distance_min >= 0.0,
          ErrorCode::Parameter, "distance range must be finite and non-negative");
  require(distance_max > distance_min, ErrorCode::Parameter,
          fmt::format("degenerate distance range [{}, {}]", distance_min, distance_max));
  return factor * (distance_max - distance_min);
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  require(lo > 0.0 && hi > lo && count >= 2, ErrorCode::Parameter,
          "log grid needs 0 < lo < hi and at least two points");
  std::vector<double> grid(count);
  const double step = std::log(hi / lo) / static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) grid[i] = lo * std::exp(step * static_cast<double>(i));
  grid.back() = hi;
  return grid;
}

SigmaScan scan_sigma(const NodeGrid& nodes, const std::vector<double>& sigma_grid, double radius,
                     const SigmaScanOptions& options) {
  require(sigma_grid.size() >= 8, ErrorCode::Parameter,
          fmt::format("sigma grid needs at least 8 points (got {})", sigma_grid.size()));
  for (std::size_t i = 0; i < sigma_grid.size(); ++i) {
    require(sigma_grid[i] > 0.0 && (i == 0 || sigma_grid[i] > sigma_grid[i - 1]),
            ErrorCode::Parameter, "sigma grid must be positive and strictly ascending");
  }
  require(!nodes.nodes.empty(), ErrorCode::Parameter, "sigma scan needs at least one node");

  const std::size_t n = nodes.size();
  const auto neighbors = radius_neighbors(nodes, radius, options.axis_scale, options.threads);
  std::vector<double> sq;  // feature distances of within-radius ordered pairs
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : neighbors[i]) {
      double s = 0.0;
      for (std::size_t f = 0; f < nodes.feature_dims(); ++f) {
        const double d = nodes.nodes[i].features[f] - nodes.nodes[j].features[f];
        s += d * d;
      }
      sq.push_back(s);
    }
  }

  SigmaScan scan;
  scan.sigma_grid = sigma_grid;
  scan.L_values.assign(sigma_grid.size(), 0.0);
  parallel_for(sigma_grid.size(), options.threads, [&](std::size_t g) {
    const double c = 1.0 / (2.0 * sigma_grid[g] * sigma_grid[g]);
    double total = 0.0;
    for (double s : sq) total += std::exp(-s * c);
    scan.L_values[g] = total;
  });

  const std::size_t m = sigma_grid.size() - 1;
  scan.slopes.resize(m);
  for (std::size_t g = 0; g < m; ++g) {
    scan.slopes[g] = std::log(scan.L_values[g + 1] / scan.L_values[g]) /
                     std::log(sigma_grid[g + 1] / sigma_grid[g]);
  }
  const auto peak = static_cast<std::size_t>(
      std::max_element(scan.slopes.begin(), scan.slopes.end()) - scan.slopes.begin());
  const double cut = options.slope_fraction * scan.slopes[peak];
  require(scan.slopes[peak] > 0.0, ErrorCode::ScanTooCoarse,
          "L(sigma) is flat over the whole grid; widen the grid");
  std::size_t a = peak;
  std::size_t b = peak;
  while (a > 0 && scan.slopes[a - 1] >= cut) --a;
  while (b + 1 < m && scan.slopes[b + 1] >= cut) ++b;
  scan.lo = a;
  scan.hi = b + 1;
  require(scan.hi - scan.lo + 1 >= 3, ErrorCode::ScanTooCoarse,
          fmt::format("linear region spans only {} grid points; refine the grid",
                      scan.hi - scan.lo + 1));
  scan.chosen_sigma = std::sqrt(sigma_grid[scan.lo] * sigma_grid[scan.hi]);

  const double range = max_feature_distance(nodes);
  if (range > 0.0) {
    scan.default_sigma = default_sigma(0.0, range, options.default_factor);
    scan.default_in_region = scan.default_sigma >= sigma_grid[scan.lo] &&
                             scan.default_sigma <= sigma_grid[scan.hi];
  }
  return scan;
}

ClusterCountEstimate estimate_k(const Eigen::VectorXd& eigenvalues, const ElbowOptions& options) {
  const Eigen::Index n = eigenvalues.size();
  require(n >= 4, ErrorCode::Parameter,
          fmt::format("elbow detection needs at least 4 eigenvalues (got {})", n));
  for (Eigen::Index i = 1; i < n; ++i) {
    require(eigenvalues(i) <= eigenvalues(i - 1) + 1e-12, ErrorCode::Parameter,
            "eigenvalues must be sorted in descending order");
  }

  ClusterCountEstimate est;
  est.eigenvalues = eigenvalues;
  est.magnified = eigenvalues.array() / (eigenvalues.array() - 1.0);

  // drops(i) = lambda_i - lambda_{i+1}, i >= 1
  Eigen::VectorXd drops = Eigen::VectorXd::Zero(n - 1);
  double largest = 0.0;
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    drops(i) = eigenvalues(i) - eigenvalues(i + 1);
    largest = std::max(largest, drops(i));
  }
  if (largest < options.flat_tolerance) fail(ErrorCode::NoElbow, "eigenvalue spectrum is flat");

  Eigen::Index best = 1;
  double best_ratio = -1.0;
  for (Eigen::Index i = 1; i + 2 < n; ++i) {
    const double ratio = drops(i) / std::max(drops(i + 1), options.epsilon);
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = i;
    }
  }
  if (best_ratio < 1.0) {
    fail(ErrorCode::NoElbow,
         fmt::format("no drop exceeds the one after it (best ratio {:.3g})", best_ratio));
  }
  est.elbow_index = static_cast<std::size_t>(best);
  est.k = est.elbow_index + 1;
  est.confidence = best_ratio;
  return est;
}

}  // namespace dmseg
