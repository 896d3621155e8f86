#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "pipeline_internal.hpp"

namespace dmseg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

GradientSearchOptions search_options(const PipelineConfig& config) {
  GradientSearchOptions o;
  o.half_window = config.gradient_half_window;
  o.column_half_width = config.gradient_columns;
  o.smoothing = config.smoothing;
  return o;
}

struct Side {
  std::size_t begin = 0;
  std::size_t end = 0;
  const char* name = "";
};

std::vector<Side> sides_for(std::size_t cols, std::size_t split, std::size_t min_width) {
  if (split < min_width || cols - split < min_width) return {{0, cols, "whole"}};
  return {{0, split, "left"}, {split, cols, "right"}};
}

// Pixels strictly inside the band between two curves (both pixel edges inside).
Mask band_mask(const ImageSlice& image, const Side& side, const std::vector<double>& upper,
               const std::vector<double>& lower, double margin) {
  Mask mask(image.rows * image.cols, 0);
  for (std::size_t c = side.begin; c < side.end; ++c) {
    for (std::size_t r = 0; r < image.rows; ++r) {
      const double row = static_cast<double>(r);
      if (row - 0.5 >= upper[c] + margin && row + 0.5 <= lower[c] - margin) mask[r * image.cols + c] = 1;
    }
  }
  return mask;
}

struct SideMap {
  Side side;
  NodeGrid grid;
  detail::Embedded map;
};

SideMap embed_side(const ImageSlice& image, const Side& side, const std::vector<double>& upper,
                   const std::vector<double>& lower, std::size_t max_k,
                   const PipelineConfig& config, const std::string& name, double margin = 0.0,
                   double lateral_scale = -1.0) {
  const Mask mask = band_mask(image, side, upper, lower, margin);
  WindowOptions wopt;
  wopt.roi = &mask;
  SideMap out;
  out.side = side;
  out.grid = normalize_features(
      window_nodes_2d(image, config.stage2_block_2d[0], config.stage2_block_2d[1], wopt));
  detail::EmbedSettings settings = detail::stage2_settings(config, max_k);
  if (lateral_scale > 0.0) settings.lateral_scale = lateral_scale;
  out.map = detail::embed_nodes(out.grid, settings, config, fmt::format("{}.{}", name, side.name));
  return out;
}

struct SideBoundaries {
  std::vector<std::vector<double>> curves;  // k-1 curves over the side's columns, NaN gaps
  std::size_t entries = 0;
  std::size_t mismatches = 0;
  std::size_t columns = 0;   // columns with a step fit
  std::size_t complete = 0;  // of those, columns holding every cluster
};

// Per-column step fit of the depth-ranked cluster labels.
SideBoundaries side_boundaries(const ImageSlice& image, const SideMap& sm, const Partition& p,
                               std::size_t min_rows) {
  const std::vector<std::size_t> rank = detail::depth_ranks(p, sm.grid);
  std::vector<int> label(image.rows * image.cols, -1);
  for (std::size_t i = 0; i < sm.grid.size(); ++i) {
    for (std::size_t m : sm.grid.nodes[i].members) label[m] = static_cast<int>(rank[p.assign[i]]);
  }
  SideBoundaries out;
  const std::size_t width = sm.side.end - sm.side.begin;
  out.curves.assign(p.k - 1, std::vector<double>(width, kNaN));
  std::vector<std::size_t> rows;
  std::vector<std::size_t> ranks;
  for (std::size_t c = sm.side.begin; c < sm.side.end; ++c) {
    rows.clear();
    ranks.clear();
    for (std::size_t r = 0; r < image.rows; ++r) {
      const int l = label[r * image.cols + c];
      if (l < 0) continue;
      rows.push_back(r);
      ranks.push_back(static_cast<std::size_t>(l));
    }
    if (rows.size() < min_rows) continue;
    const detail::StepFit fit = detail::fit_column_steps(rows, ranks, p.k);
    out.entries += rows.size();
    out.mismatches += fit.mismatches;
    ++out.columns;
    std::vector<bool> seen(p.k, false);
    for (std::size_t r : ranks) seen[r] = true;
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) ++out.complete;
    for (std::size_t b = 0; b + 1 < p.k; ++b) out.curves[b][c - sm.side.begin] = fit.boundaries[b];
  }
  return out;
}

// Joins per-side dense curves, blending linearly across the seam columns.
std::vector<double> join_sides(const std::vector<Side>& sides,
                               const std::vector<std::vector<double>>& parts, std::size_t cols,
                               std::size_t seam) {
  std::vector<double> out(cols);
  for (std::size_t s = 0; s < sides.size(); ++s) {
    for (std::size_t c = sides[s].begin; c < sides[s].end; ++c) out[c] = parts[s][c - sides[s].begin];
  }
  if (sides.size() < 2) return out;
  const std::size_t split = sides[1].begin;
  const auto half = static_cast<long>(seam / 2);
  const std::vector<double>& left = parts[0];
  const std::vector<double>& right = parts[1];
  for (long d = -half; d <= half; ++d) {
    const long c = static_cast<long>(split) + d;
    if (c < 0 || c >= static_cast<long>(cols)) continue;
    const double l = c < static_cast<long>(split) ? left[static_cast<std::size_t>(c)] : left.back();
    const double r = c >= static_cast<long>(split) ? right[static_cast<std::size_t>(c) - split]
                                                    : right.front();
    const double w = static_cast<double>(d + half + 1) / static_cast<double>(2 * half + 2);
    out[static_cast<std::size_t>(c)] = (1.0 - w) * l + w * r;
  }
  return out;
}

std::vector<double> smooth_side(const std::vector<double>& raw, const PipelineConfig& config,
                                const std::string& what) {
  const auto defined = std::count_if(raw.begin(), raw.end(), [](double v) { return std::isfinite(v); });
  require(defined >= 4, ErrorCode::StageFailure,
          fmt::format("{}: ROI too thin in {} of {} columns", what, raw.size() - defined, raw.size()));
  return smooth_curve(raw, config.smoothing);
}

std::optional<std::vector<double>> rescue_2d(const ImageSlice& aligned,
                                             const std::vector<double>& upper,
                                             const std::vector<double>& lower, std::size_t split,
                                             const PipelineConfig& config, Diagnostics& diag) {
  const std::vector<Side> sides = sides_for(aligned.cols, split, 2 * config.stage2_block_2d[1]);
  std::vector<std::vector<double>> parts;
  for (const Side& side : sides) {
    std::string reason;
    try {
      SideMap sm = embed_side(aligned, side, upper, lower, 2, config, "rescue",
                              config.rescue_margin, config.lateral_scale_rescue);
      const Partition p = detail::cluster_nodes(sm.map, 2, config);
      const double separation = detail::cluster_separation(p, sm.grid);
      const SideBoundaries b = side_boundaries(aligned, sm, p, 2 * config.stage2_block_2d[0]);
      diag.maps.push_back(sm.map.diag);
      const double agreement =
          b.entries > 0 ? 1.0 - static_cast<double>(b.mismatches) / static_cast<double>(b.entries)
                        : 0.0;
      const double coverage =
          b.columns > 0 ? static_cast<double>(b.complete) / static_cast<double>(b.columns) : 0.0;
      diag.trail.push_back(
          {"rescue", fmt::format("{} side: separation {:.2f}, step agreement {:.3f}, coverage {:.3f}",
                                 side.name, separation, agreement, coverage)});
      if (p.coincident || separation < config.rescue_min_separation ||
          agreement < config.rescue_min_agreement || coverage < config.rescue_min_coverage) {
        reason = "no two-cluster separation";
      } else {
        parts.push_back(smooth_side(b.curves[0], config, "rescue"));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::StageFailure && e.code() != ErrorCode::NoElbow) throw;
      reason = e.what();
    }
    if (!reason.empty()) {
      diag.trail.push_back({"rescue", fmt::format("{} side failed: {}", side.name, reason)});
      return std::nullopt;
    }
  }
  std::vector<double> joined = join_sides(sides, parts, aligned.cols, config.seam_columns);
  for (std::size_t c = 0; c < joined.size(); ++c) {
    joined[c] = std::clamp(joined[c], upper[c], std::max(upper[c], lower[c]));
  }
  return joined;
}

}  // namespace

Stage1Result run_stage1_2d(const ImageSlice& slice, const PipelineConfig& config,
                           Diagnostics& diag) {
  validate(slice);
  validate(config);
  Stage1Result out;
  out.grid = normalize_features(
      window_nodes_2d(slice, config.stage1_block_2d[0], config.stage1_block_2d[1]));
  detail::Embedded map = detail::embed_nodes(
      out.grid, detail::stage1_settings(config, config.radius_stage1_2d), config, "stage1");
  out.partition = detail::cluster_nodes(map, config.k_stage1, config);
  diag.maps.push_back(map.diag);
  diag.trail.push_back(
      {"stage1", fmt::format("elbow k={}, clustering with k={}",
                             map.diag.k_elbow ? fmt::format("{}", *map.diag.k_elbow) : "none",
                             config.k_stage1)});
  require(!out.partition.coincident, ErrorCode::StageFailure,
          "stage 1: all nodes coincide in diffusion space, no distinct clusters");

  const std::vector<std::size_t> rank = detail::depth_ranks(out.partition, out.grid);
  const std::size_t middle_rank = config.k_stage1 / 2;
  out.middle_cluster = static_cast<std::size_t>(
      std::find(rank.begin(), rank.end(), middle_rank) - rank.begin());
  const std::vector<std::size_t> sizes = out.partition.cluster_sizes();
  ClusterEdges edges = extract_cluster_edges(out.partition, out.grid, out.middle_cluster);
  const auto covered = static_cast<std::size_t>(
      std::count_if(edges.top.begin(), edges.top.end(), [](double v) { return std::isfinite(v); }));
  if (covered * 2 < slice.cols) {
    std::string sizes_text;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      sizes_text += fmt::format("{}{}:{}(rank {})", c ? ", " : "", c, sizes[c], rank[c]);
    }
    fail(ErrorCode::StageFailure,
         fmt::format("stage 1: middle cluster spans {} of {} columns; clusters {}", covered,
                     slice.cols, sizes_text));
  }
  for (double& v : edges.top) v -= 0.5;
  for (double& v : edges.bottom) v += 0.5;

  const GradientSearchOptions gopt = search_options(config);
  GradientSearchResult s1 =
      gradient_refine(slice, smooth_curve(edges.top, config.smoothing), config.surface1_polarity, gopt);
  GradientSearchResult s7 = gradient_refine(slice, smooth_curve(edges.bottom, config.smoothing),
                                            config.surface7_polarity, gopt);
  for (std::size_t c = 0; c < slice.cols; ++c) s7.rows[c] = std::max(s7.rows[c], s1.rows[c]);
  OuterSurfaces outer = detect_outer_surfaces(slice, s7.rows, config.surface8_polarity,
                                              config.outer_search_rows, gopt);
  diag.clamped_columns += s1.clamped_columns + s7.clamped_columns + outer.clamped_columns;
  if (diag.clamped_columns > 0) {
    diag.flags.push_back(
        fmt::format("gradient search clamped at the image border in {} columns", diag.clamped_columns));
  }

  out.surfaces = SurfaceSet(slice.cols, 1);
  out.surfaces.axial_um = slice.axial_um;
  out.surfaces.lateral_um = slice.lateral_um;
  out.surfaces.set(kS1, s1.rows, Provenance::GradientRefined);
  out.surfaces.set(kS7, s7.rows, Provenance::GradientRefined);
  for (std::size_t i = 0; i < 4; ++i) {
    out.surfaces.set(kS8 + i, outer.rows[i], Provenance::GradientRefined);
  }
  enforce_ordering(out.surfaces);
  out.alignment = alignment_for(out.surfaces.at(kS10).rows);
  out.aligned = flatten(slice, out.alignment);
  diag.trail.push_back({"flatten", fmt::format("surface 10 aligned to row {}", out.alignment.target)});
  return out;
}

Stage2Result run_stage2_2d(const ImageSlice& aligned, const std::vector<double>& s1,
                           const std::vector<double>& s7, const PipelineConfig& config,
                           Diagnostics& diag) {
  validate(config);
  require(s1.size() == aligned.cols && s7.size() == aligned.cols, ErrorCode::Input,
          "stage 2 surfaces do not match the image width");
  const std::size_t split = split_left_right(s1);
  diag.split_column = split;
  const std::vector<Side> sides = sides_for(aligned.cols, split, 2 * config.stage2_block_2d[1]);
  diag.trail.push_back({"split", sides.size() == 2 ? fmt::format("left/right split at column {}", split)
                                                   : std::string("no split")});

  const std::size_t max_k = config.auto_cluster_protocol ? 7 : config.k_stage2;
  std::vector<SideMap> maps;
  for (const Side& side : sides) {
    maps.push_back(embed_side(aligned, side, s1, s7, max_k, config, "stage2"));
  }

  Stage2Result out;
  std::size_t k = config.k_stage2;
  if (config.auto_cluster_protocol) {
    // One elbow for the whole slice, taken on the mean side spectrum.
    std::size_t len = std::numeric_limits<std::size_t>::max();
    for (const SideMap& sm : maps) len = std::min(len, sm.map.diag.eigenvalues.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(len));
    for (const SideMap& sm : maps) {
      for (std::size_t i = 0; i < len; ++i) {
        mean(static_cast<Eigen::Index>(i)) += sm.map.diag.eigenvalues[i] / static_cast<double>(maps.size());
      }
    }
    std::optional<std::size_t> elbow;
    if (auto est = detail::spectrum_elbow(mean, config.elbow_window_stage2, config.elbow_epsilon_stage2)) {
      elbow = est->k;
    }
    if (elbow) {
      out.k_elbow = *elbow;
      k = std::clamp<std::size_t>(*elbow, 2, 7);
      if (k != *elbow) diag.flags.push_back(fmt::format("stage 2 elbow k={} clamped to {}", *elbow, k));
    } else {
      diag.flags.push_back("stage 2: no eigenvalue elbow, using the configured k");
    }
    diag.trail.push_back({"step1", fmt::format("elbow k={}, clustering with k={}",
                                               elbow ? fmt::format("{}", *elbow) : "none", k)});
  } else {
    diag.trail.push_back({"stage2", fmt::format("fixed k={}", k)});
  }
  out.k_used = k;

  std::vector<std::vector<std::vector<double>>> parts(k - 1);
  for (SideMap& sm : maps) {
    const Partition p = detail::cluster_nodes(sm.map, k, config);
    diag.maps.push_back(sm.map.diag);
    if (p.tiny_cluster) diag.flags.push_back(fmt::format("{}: tiny cluster", sm.map.diag.name));
    const SideBoundaries b = side_boundaries(aligned, sm, p, 2 * config.stage2_block_2d[0]);
    for (std::size_t j = 0; j + 1 < k; ++j) {
      parts[j].push_back(smooth_side(b.curves[j], config, sm.map.diag.name));
    }
  }
  for (std::size_t j = 0; j + 1 < k; ++j) {
    out.boundaries.push_back(join_sides(sides, parts[j], aligned.cols, config.seam_columns));
  }
  detail::order_between(out.boundaries, s1, s7);
  return out;
}

SegmentationResult segment_2d(const ImageSlice& slice, const PipelineConfig& config) {
  SegmentationResult result;
  Diagnostics& diag = result.diagnostics;
  Stage1Result st1 = run_stage1_2d(slice, config, diag);
  const std::vector<double> a1 = to_aligned(st1.surfaces.at(kS1).rows, st1.alignment);
  const std::vector<double> a7 = to_aligned(st1.surfaces.at(kS7).rows, st1.alignment);
  Stage2Result st2 = run_stage2_2d(st1.aligned, a1, a7, config, diag);

  const detail::LabelPlan plan = detail::plan_labels(st2.boundaries, a1, a7, config);
  diag.protocol_path = plan.path;
  diag.trail.push_back({"protocol", fmt::format("path {}: {}", plan.path, plan.detail)});

  result.surfaces = st1.surfaces;
  for (std::size_t i = 0; i < plan.labels.size(); ++i) {
    result.surfaces.set(plan.labels[i], from_aligned(st2.boundaries[i], st1.alignment),
                        Provenance::Clustered);
  }
  if (plan.rescue) {
    auto found = rescue_2d(st1.aligned, st2.boundaries[0], st2.boundaries[1], diag.split_column,
                           config, diag);
    if (found) {
      result.surfaces.set(kS3, from_aligned(*found, st1.alignment), Provenance::Clustered);
      diag.trail.push_back({"step5", "boundary 3 recovered by the k=2 map"});
    } else {
      diag.flags.push_back("boundary 3 missing: rescue map found no separation");
      diag.trail.push_back({"step5", "boundary 3 reported missing"});
    }
  }
  enforce_ordering(result.surfaces);
  return result;
}

double stage1_band_purity(const SurfaceSet& truth, const ImageSlice& slice,
                          const PipelineConfig& config) {
  validate(slice);
  validate(config);
  require(truth.cols == slice.cols && truth.has(kS1) && truth.has(kS7), ErrorCode::Input,
          "purity needs surfaces 1 and 7 over the slice width");
  const NodeGrid grid = normalize_features(
      window_nodes_2d(slice, config.stage1_block_2d[0], config.stage1_block_2d[1]));
  detail::Embedded map = detail::embed_nodes(
      grid, detail::stage1_settings(config, config.radius_stage1_2d), config, "stage1");
  const Partition p = detail::cluster_nodes(map, config.k_stage1, config);
  const std::vector<std::size_t> rank = detail::depth_ranks(p, grid);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& c = grid.nodes[i].centroid;
    const auto col = static_cast<std::size_t>(std::lround(c[1]));
    const double top = truth.at(kS1).rows[std::min(col, slice.cols - 1)];
    const double bottom = truth.at(kS7).rows[std::min(col, slice.cols - 1)];
    const std::size_t band = c[0] < top ? 0 : (c[0] <= bottom ? 1 : 2);
    const std::size_t expected = band * (config.k_stage1 - 1) / 2;
    if (rank[p.assign[i]] == expected) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(grid.size());
}

}  // namespace dmseg
