#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "dmseg/model_select.hpp"
#include "pipeline_internal.hpp"

namespace dmseg {

void validate(const PipelineConfig& c) {
  auto positive = [](auto v) { return v > 0; };
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::Config, fmt::format("invalid pipeline setting: {}", what));
  };
  check(std::all_of(c.stage1_block_2d.begin(), c.stage1_block_2d.end(), positive), "stage1_block_2d");
  check(std::all_of(c.stage2_block_2d.begin(), c.stage2_block_2d.end(), positive), "stage2_block_2d");
  check(std::all_of(c.stage1_block_3d.begin(), c.stage1_block_3d.end(), positive), "stage1_block_3d");
  check(std::all_of(c.stage2_block_3d.begin(), c.stage2_block_3d.end(), positive), "stage2_block_3d");
  check(c.k_stage1 >= 2, "k_stage1 >= 2");
  check(c.k_stage2 >= 2, "k_stage2 >= 2");
  check(c.tau >= 1, "tau >= 1");
  check(c.sigma_factor > 0.0, "sigma_factor > 0");
  check(c.sparsify_threshold >= 0.0 && c.sparsify_threshold < 1.0, "sparsify_threshold in [0, 1)");
  check(c.radius_stage1_2d > 0.0 && c.radius_stage1_3d > 0.0 && c.radius_stage2 > 0.0,
        "radii > 0");
  check(c.elbow_window_stage1 >= 4 && c.elbow_window_stage2 >= 4, "elbow windows >= 4");
  check(c.elbow_epsilon_stage1 > 0.0 && c.elbow_epsilon_stage2 > 0.0, "elbow epsilons > 0");
  check(c.lateral_scale_stage1 > 0.0 && c.lateral_scale_stage2 > 0.0 && c.lateral_scale_rescue > 0.0,
        "lateral scales > 0");
  check(c.gradient_half_window >= 1, "gradient_half_window >= 1");
  check(c.outer_search_rows >= 3, "outer_search_rows >= 3");
  check(c.restarts >= 1, "restarts >= 1");
  check(c.smoothing.loess_window >= 3, "smoothing.loess_window >= 3");
  check(c.smoothing.spline_lambda >= 0.0, "smoothing.spline_lambda >= 0");
  check(c.smoothing.outlier_mads > 0.0, "smoothing.outlier_mads > 0");
  check(c.seam_columns >= 1, "seam_columns >= 1");
  check(c.slice_step_3d >= 1, "slice_step_3d >= 1");
  check(c.rescue_min_agreement > 0.0 && c.rescue_min_agreement <= 1.0,
        "rescue_min_agreement in (0, 1]");
  check(c.rescue_min_coverage >= 0.0 && c.rescue_min_coverage <= 1.0, "rescue_min_coverage in [0, 1]");
  check(c.rescue_margin >= 0.0, "rescue_margin >= 0");
  check(std::is_sorted(c.layer_depth_prior.begin(), c.layer_depth_prior.end()) &&
            c.layer_depth_prior.front() > 0.0 && c.layer_depth_prior.back() < 1.0,
        "layer_depth_prior ascending in (0, 1)");
  check(c.threads >= 1, "threads >= 1");
}

namespace detail {

EmbedSettings stage1_settings(const PipelineConfig& config, double radius) {
  return {radius, config.lateral_scale_stage1, config.elbow_window_stage1,
          config.elbow_epsilon_stage1, config.k_stage1};
}

EmbedSettings stage2_settings(const PipelineConfig& config, std::size_t max_k) {
  return {config.radius_stage2, config.lateral_scale_stage2, config.elbow_window_stage2,
          config.elbow_epsilon_stage2, max_k};
}

std::optional<ClusterCountEstimate> spectrum_elbow(const Eigen::VectorXd& eigenvalues,
                                                  std::size_t window, double epsilon) {
  const auto w = static_cast<Eigen::Index>(std::min<std::size_t>(window, eigenvalues.size()));
  if (w < 4) return std::nullopt;
  try {
    ElbowOptions eopt;
    eopt.epsilon = epsilon;
    return estimate_k(eigenvalues.head(w), eopt);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoElbow) throw;
  }
  return std::nullopt;
}

Embedded embed_nodes(const NodeGrid& grid, const EmbedSettings& settings,
                     const PipelineConfig& config, std::string name) {
  const double radius_diagonals = settings.radius;
  const std::size_t elbow_window = settings.elbow_window;
  const std::size_t max_k = settings.max_k;
  const std::size_t n = grid.size();
  require(n >= std::max<std::size_t>(max_k + 2, 8), ErrorCode::StageFailure,
          fmt::format("{}: only {} graph nodes", name, n));
  std::array<double, 3> scale{1.0, 1.0, 1.0};
  for (int d = 0; d < grid.dims; ++d) scale[d] = 1.0 / static_cast<double>(grid.block_shape[d]);
  // Depth is axis 0 in 2D and axis 1 in 3D; the others are lateral.
  for (int d = 0; d < grid.dims; ++d) {
    if (d != (grid.dims == 2 ? 0 : 1)) scale[d] *= settings.lateral_scale;
  }

  Embedded map;
  map.diag.name = std::move(name);
  map.diag.nodes = n;
  map.diag.radius = radius_diagonals * std::sqrt(static_cast<double>(grid.dims));
  map.diag.sigma_geo = config.sigma_factor * max_geometric_distance(grid, scale);
  map.diag.sigma_feat = config.sigma_factor * max_feature_distance(grid);
  require(map.diag.sigma_feat > 0.0, ErrorCode::StageFailure,
          fmt::format("{}: node features are constant, no distinct clusters", map.diag.name));

  AffinityOptions aopt;
  aopt.axis_scale = scale;
  aopt.threads = config.threads;
  map.chain = normalize_markov(
      build_affinity(grid, map.diag.sigma_geo, map.diag.sigma_feat, map.diag.radius, aopt),
      config.sparsify_threshold);

  const std::size_t omega = std::min(std::max<std::size_t>(3, max_k - 1), n - 1);
  SpectralOptions sopt;
  sopt.eigenpairs = std::min(n, std::max(elbow_window, omega + 1));
  sopt.threads = config.threads;
  map.embedding = spectral_decompose(map.chain, omega, config.tau, 0.01, sopt);

  const Eigen::VectorXd& ev = map.embedding.eigenvalues;
  map.diag.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  if (auto est = spectrum_elbow(ev, elbow_window, settings.elbow_epsilon)) {
    map.diag.k_elbow = est->k;
    map.diag.elbow_confidence = est->confidence;
  }
  return map;
}

Partition cluster_nodes(Embedded& map, std::size_t k, const PipelineConfig& config) {
  const auto cols = static_cast<Eigen::Index>(
      std::min<std::size_t>(std::max<std::size_t>(3, k - 1), map.embedding.coords.cols()));
  KMeansOptions kopt;
  kopt.restarts = config.restarts;
  kopt.seed = config.seed;
  kopt.threads = config.threads;
  const Eigen::MatrixXd coords = map.embedding.coords.leftCols(cols);
  Partition p = embed_kmeans(coords, map.chain.phi0, k, kopt);
  if (p.tiny_cluster && static_cast<Eigen::Index>(k) < coords.rows()) {
    // Re-cluster with one more group and fold the tiny ones into their
    // nearest substantial centroid; kept only when k substantial groups remain.
    const Partition wider = embed_kmeans(coords, map.chain.phi0, k + 1, kopt);
    const std::vector<std::size_t> sizes = wider.cluster_sizes();
    const double floor = kopt.tiny_fraction * static_cast<double>(coords.rows());
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      if (static_cast<double>(sizes[c]) >= floor) keep.push_back(c);
    }
    if (keep.size() == k) {
      std::vector<std::size_t> assign(wider.assign.size());
      for (std::size_t x = 0; x < assign.size(); ++x) {
        const auto row = coords.row(static_cast<Eigen::Index>(x));
        const auto own = std::find(keep.begin(), keep.end(), wider.assign[x]);
        std::size_t best = static_cast<std::size_t>(own - keep.begin());
        double dist = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; own == keep.end() && j < keep.size(); ++j) {
          const double d = (row - wider.centroids.row(static_cast<Eigen::Index>(keep[j]))).squaredNorm();
          if (d < dist) {
            dist = d;
            best = j;
          }
        }
        assign[x] = best;
      }
      Partition folded = make_partition(assign, k, coords, map.chain.phi0);
      folded.seed = wider.seed;
      folded.tiny_cluster = false;
      p = std::move(folded);
    }
  }
  map.diag.k_used = k;
  map.diag.cluster_sizes = p.cluster_sizes();
  map.diag.tiny_cluster = p.tiny_cluster;
  map.diag.coincident = p.coincident;
  return p;
}

namespace {

std::size_t member_row(const NodeGrid& grid, std::size_t m) {
  if (grid.dims == 2) return m / grid.domain[1];
  return (m / grid.domain[0]) % grid.domain[1];
}

}  // namespace

std::vector<std::size_t> depth_ranks(const Partition& partition, const NodeGrid& grid) {
  std::vector<double> sum(partition.k, 0.0);
  std::vector<double> count(partition.k, 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const std::size_t c = partition.assign[i];
    for (std::size_t m : grid.nodes[i].members) {
      sum[c] += static_cast<double>(member_row(grid, m));
      count[c] += 1.0;
    }
  }
  std::vector<std::size_t> order(partition.k);
  for (std::size_t c = 0; c < partition.k; ++c) order[c] = c;
  auto mean = [&](std::size_t c) {
    return count[c] > 0.0 ? sum[c] / count[c] : std::numeric_limits<double>::infinity();
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean(a) < mean(b); });
  std::vector<std::size_t> rank(partition.k);
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

double cluster_separation(const Partition& partition, const NodeGrid& grid) {
  double sum[2] = {0.0, 0.0};
  double sq[2] = {0.0, 0.0};
  double n[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const std::size_t c = partition.assign[i];
    if (c > 1) continue;
    const double f = grid.nodes[i].features[0];
    sum[c] += f;
    sq[c] += f * f;
    n[c] += 1.0;
  }
  if (n[0] < 2.0 || n[1] < 2.0) return 0.0;
  const double m0 = sum[0] / n[0];
  const double m1 = sum[1] / n[1];
  const double ss = (sq[0] - n[0] * m0 * m0) + (sq[1] - n[1] * m1 * m1);
  const double pooled = std::sqrt(std::max(ss, 0.0) / (n[0] + n[1] - 2.0));
  if (pooled <= 0.0) return m0 == m1 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(m0 - m1) / pooled;
}

StepFit fit_column_steps(const std::vector<std::size_t>& rows,
                         const std::vector<std::size_t>& ranks, std::size_t k) {
  StepFit fit;
  const std::size_t len = rows.size();
  if (len == 0 || k < 2) return fit;
  // cost[j]: fewest mismatches so far with the current entry assigned rank j.
  std::vector<std::size_t> cost(k, 0);
  std::vector<std::size_t> next(k);
  std::vector<std::size_t> from(len * k, 0);
  for (std::size_t j = 0; j < k; ++j) cost[j] = ranks[0] == j ? 0 : 1;
  for (std::size_t i = 1; i < len; ++i) {
    std::size_t best = cost[0];
    std::size_t arg = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (cost[j] < best) {
        best = cost[j];
        arg = j;
      }
      next[j] = best + (ranks[i] == j ? 0 : 1);
      from[i * k + j] = arg;
    }
    cost.swap(next);
  }
  std::size_t j = static_cast<std::size_t>(std::min_element(cost.begin(), cost.end()) - cost.begin());
  fit.mismatches = cost[j];
  std::vector<std::size_t> assigned(len);
  for (std::size_t i = len; i-- > 0;) {
    assigned[i] = j;
    if (i > 0) j = from[i * k + j];
  }
  fit.boundaries.resize(k - 1);
  for (std::size_t b = 1; b < k; ++b) {
    std::size_t i = 0;
    while (i < len && assigned[i] < b) ++i;
    double pos = 0.0;
    if (i == 0) {
      pos = static_cast<double>(rows[0]) - 0.5;
    } else if (i == len) {
      pos = static_cast<double>(rows[len - 1]) + 0.5;
    } else {
      pos = 0.5 * static_cast<double>(rows[i - 1] + rows[i]);
    }
    fit.boundaries[b - 1] = pos;
  }
  return fit;
}

namespace {

double mean_gap(const std::vector<double>& upper, const std::vector<double>& lower) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < upper.size(); ++c) {
    if (!std::isfinite(upper[c]) || !std::isfinite(lower[c])) continue;
    sum += lower[c] - upper[c];
    ++n;
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

std::vector<std::size_t> sequential_labels(std::size_t count) {
  static constexpr std::size_t order[] = {1, 2, 3, 4, 5, 6};  // 2, 3, 4, 5, 6, 6a
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < count && i < 6; ++i) labels.push_back(order[i]);
  return labels;
}

// Labels 1..5 (surfaces 2 to 6) for the first `m` boundaries, chosen in order
// so that their relative depths between surfaces 1 and 7 best match the prior.
std::vector<std::size_t> prior_labels(const std::vector<std::vector<double>>& boundaries,
                                      std::size_t m, const std::vector<double>& s1,
                                      const std::vector<double>& s7,
                                      const std::array<double, 6>& prior) {
  const double span = std::max(mean_gap(s1, s7), 1e-9);
  std::vector<double> depth(m);
  for (std::size_t i = 0; i < m; ++i) depth[i] = mean_gap(s1, boundaries[i]) / span;
  std::vector<std::size_t> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << 5); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != m) continue;
    std::vector<std::size_t> labels;
    double cost = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (!(mask & (1u << j))) continue;
      cost += std::pow(depth[labels.size()] - prior[j], 2);
      labels.push_back(j + 1);
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = labels;
    }
  }
  return best;
}

}  // namespace

LabelPlan plan_labels(const std::vector<std::vector<double>>& boundaries,
                      const std::vector<double>& s1, const std::vector<double>& s7,
                      const PipelineConfig& config) {
  LabelPlan plan;
  const std::size_t count = boundaries.size();
  const std::size_t k = count + 1;
  if (!config.auto_cluster_protocol) {
    plan.labels = sequential_labels(count);
    plan.path = "fixed";
    plan.detail = fmt::format("fixed k={}, boundaries labelled top to bottom", k);
    return plan;
  }
  if (count == 0) {
    plan.path = "none";
    plan.detail = "no inner boundaries";
    return plan;
  }
  const std::vector<double>& lowest = boundaries.back();
  const std::vector<double>& above = count >= 2 ? boundaries[count - 2] : s1;
  const double up = mean_gap(above, lowest);
  const double down = mean_gap(lowest, s7);
  const std::string distances =
      fmt::format("lowest boundary: {:.2f} px below its upper neighbour, {:.2f} px above surface 7",
                  up, down);
  if (up <= down) {
    if (count < 5) {
      plan.labels = prior_labels(boundaries, count, s1, s7, config.layer_depth_prior);
      plan.detail = distances + fmt::format("; no separate 6a, k={}, labels by nominal depth", k);
    } else {
      plan.labels = sequential_labels(count);
      plan.detail = distances + "; no separate 6a, labels sequential";
    }
    plan.path = "3a";
    return plan;
  }
  if (k == 6) {
    plan.labels = {1, 3, 4, 5, 6};
    plan.rescue = true;
    plan.path = "4a";
    plan.detail = distances + "; 6a present with k=6, rescue map for boundary 3";
  } else if (k < 6) {
    plan.labels = prior_labels(boundaries, count - 1, s1, s7, config.layer_depth_prior);
    plan.labels.push_back(6);
    plan.path = "4b";
    plan.detail = distances + fmt::format("; 6a present with k={}, merged layers accepted", k);
  } else {
    plan.labels = sequential_labels(count);
    plan.path = "4c";
    plan.detail = distances + fmt::format("; 6a present with k={}, accepted as is", k);
  }
  return plan;
}

void order_between(std::vector<std::vector<double>>& curves, const std::vector<double>& upper,
                   const std::vector<double>& lower) {
  for (std::size_t c = 0; c < upper.size(); ++c) {
    double lo = upper[c];
    for (auto& curve : curves) {
      curve[c] = std::clamp(curve[c], lo, std::max(lo, lower[c]));
      lo = curve[c];
    }
  }
}

}  // namespace detail
}  // namespace dmseg
