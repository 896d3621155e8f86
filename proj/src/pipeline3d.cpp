#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "dmseg/parallel.hpp"
#include "pipeline_internal.hpp"

namespace dmseg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Surfaces on the (x, z) grid are stored x fastest: index x + nx * z.
std::vector<double> row_of(const std::vector<double>& grid, std::size_t nx, std::size_t z) {
  return {grid.begin() + static_cast<std::ptrdiff_t>(z * nx),
          grid.begin() + static_cast<std::ptrdiff_t>((z + 1) * nx)};
}

void put_row(std::vector<double>& grid, std::size_t nx, std::size_t z,
             const std::vector<double>& row) {
  std::copy(row.begin(), row.end(), grid.begin() + static_cast<std::ptrdiff_t>(z * nx));
}

std::size_t finite_count(const std::vector<double>& v) {
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [](double x) { return std::isfinite(x); }));
}

// Smooths along x on every slice with enough samples, then fills and smooths
// along z per column.
std::vector<double> smooth_surface(const std::vector<double>& raw, std::size_t nx, std::size_t nz,
                                   const SmoothingOptions& options, const std::string& what) {
  require(finite_count(raw) >= 4, ErrorCode::StageFailure,
          fmt::format("{}: fewer than 4 surface samples", what));
  std::vector<double> out(raw.size(), kNaN);
  for (std::size_t z = 0; z < nz; ++z) {
    const std::vector<double> row = row_of(raw, nx, z);
    if (finite_count(row) >= 4) put_row(out, nx, z, smooth_curve(row, options));
  }
  for (std::size_t x = 0; x < nx; ++x) {
    std::vector<double> col(nz);
    for (std::size_t z = 0; z < nz; ++z) col[z] = out[x + nx * z];
    if (finite_count(col) == 0) {
      for (std::size_t z = 0; z < nz; ++z) col[z] = raw[x + nx * z];
      if (finite_count(col) == 0) continue;
    }
    col = nz >= 4 && finite_count(col) >= 4 ? smooth_curve(col, options) : fill_gaps(col);
    for (std::size_t z = 0; z < nz; ++z) out[x + nx * z] = col[z];
  }
  // Columns with no samples at all take their slice neighbours.
  for (std::size_t z = 0; z < nz; ++z) {
    std::vector<double> row = row_of(out, nx, z);
    if (finite_count(row) > 0 && finite_count(row) < nx) put_row(out, nx, z, fill_gaps(row));
  }
  return out;
}

Volume flatten_volume(const Volume& volume, const AlignmentRecord& record) {
  Volume out = volume;
  std::fill(out.intensities.begin(), out.intensities.end(), 0.0);
  const auto ny = static_cast<long>(volume.ny);
  for (std::size_t z = 0; z < volume.nz; ++z) {
    for (std::size_t x = 0; x < volume.nx; ++x) {
      const long shift = record.shifts[x + volume.nx * z];
      for (long y = 0; y < ny; ++y) {
        const long t = y + shift;
        if (t < 0 || t >= ny) continue;
        out.at(x, static_cast<std::size_t>(t), z) = volume.at(x, static_cast<std::size_t>(y), z);
      }
    }
  }
  return out;
}

Mask band_mask_3d(const Volume& v, const std::vector<double>& upper,
                  const std::vector<double>& lower, const OnhMask* onh, double margin) {
  Mask mask(v.nx * v.ny * v.nz, 0);
  for (std::size_t z = 0; z < v.nz; ++z) {
    for (std::size_t x = 0; x < v.nx; ++x) {
      const std::size_t c = x + v.nx * z;
      if (onh && onh->xz[c]) continue;
      for (std::size_t y = 0; y < v.ny; ++y) {
        const double row = static_cast<double>(y);
        if (row - 0.5 >= upper[c] + margin && row + 0.5 <= lower[c] - margin) {
          mask[v.index(x, y, z)] = 1;
        }
      }
    }
  }
  return mask;
}

struct ColumnBoundaries {
  std::vector<std::vector<double>> curves;  // k-1 surfaces on the (x, z) grid
  std::size_t entries = 0;
  std::size_t mismatches = 0;
  std::size_t columns = 0;
  std::size_t complete = 0;
};

ColumnBoundaries column_boundaries(const Volume& v, const NodeGrid& grid, const Partition& p,
                                   std::size_t min_rows) {
  const std::vector<std::size_t> rank = detail::depth_ranks(p, grid);
  std::vector<int> label(v.nx * v.ny * v.nz, -1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t m : grid.nodes[i].members) label[m] = static_cast<int>(rank[p.assign[i]]);
  }
  ColumnBoundaries out;
  out.curves.assign(p.k - 1, std::vector<double>(v.nx * v.nz, kNaN));
  std::vector<std::size_t> rows;
  std::vector<std::size_t> ranks;
  for (std::size_t z = 0; z < v.nz; ++z) {
    for (std::size_t x = 0; x < v.nx; ++x) {
      rows.clear();
      ranks.clear();
      for (std::size_t y = 0; y < v.ny; ++y) {
        const int l = label[v.index(x, y, z)];
        if (l < 0) continue;
        rows.push_back(y);
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
      for (std::size_t b = 0; b + 1 < p.k; ++b) out.curves[b][x + v.nx * z] = fit.boundaries[b];
    }
  }
  return out;
}

void mask_canal(std::vector<double>& surface, const OnhMask* onh) {
  if (!onh) return;
  for (std::size_t c = 0; c < surface.size(); ++c) {
    if (onh->xz[c]) surface[c] = kNaN;
  }
}

std::vector<bool> refined_slices(std::size_t nz, const PipelineConfig& config) {
  std::vector<bool> refined(nz, config.pathology_mode);
  for (std::size_t z = 0; z < nz; z += config.slice_step_3d) refined[z] = true;
  refined[nz - 1] = true;
  return refined;
}

// Linear interpolation across z between refined slices.
void interpolate_slices(std::vector<double>& surface, std::size_t nx, std::size_t nz,
                        const std::vector<bool>& refined) {
  for (std::size_t z = 0; z < nz; ++z) {
    if (refined[z]) continue;
    std::size_t lo = z;
    while (!refined[lo]) --lo;
    std::size_t hi = z;
    while (!refined[hi]) ++hi;
    const double t = static_cast<double>(z - lo) / static_cast<double>(hi - lo);
    for (std::size_t x = 0; x < nx; ++x) {
      surface[x + nx * z] = (1.0 - t) * surface[x + nx * lo] + t * surface[x + nx * hi];
    }
  }
}

std::optional<std::vector<double>> rescue_3d(const Volume& aligned,
                                             const std::vector<double>& upper,
                                             const std::vector<double>& lower, const OnhMask* onh,
                                             const PipelineConfig& config, Diagnostics& diag) {
  try {
    const Mask mask = band_mask_3d(aligned, upper, lower, onh, config.rescue_margin);
    WindowOptions wopt;
    wopt.roi = &mask;
    const NodeGrid grid =
        normalize_features(window_nodes_3d(aligned, config.stage2_block_3d, wopt));
    detail::EmbedSettings settings = detail::stage2_settings(config, 2);
    settings.lateral_scale = config.lateral_scale_rescue;
    detail::Embedded map = detail::embed_nodes(grid, settings, config, "rescue");
    const Partition p = detail::cluster_nodes(map, 2, config);
    diag.maps.push_back(map.diag);
    const double separation = detail::cluster_separation(p, grid);
    const ColumnBoundaries b = column_boundaries(aligned, grid, p, 2);
    const double agreement =
        b.entries > 0 ? 1.0 - static_cast<double>(b.mismatches) / static_cast<double>(b.entries)
                      : 0.0;
    const double coverage =
        b.columns > 0 ? static_cast<double>(b.complete) / static_cast<double>(b.columns) : 0.0;
    diag.trail.push_back(
        {"rescue", fmt::format("separation {:.2f}, step agreement {:.3f}, coverage {:.3f}",
                               separation, agreement, coverage)});
    if (p.coincident || separation < config.rescue_min_separation ||
        agreement < config.rescue_min_agreement || coverage < config.rescue_min_coverage) {
      diag.trail.push_back({"rescue", "failed: no two-cluster separation"});
      return std::nullopt;
    }
    std::vector<double> s =
        smooth_surface(b.curves[0], aligned.nx, aligned.nz, config.smoothing, "rescue");
    for (std::size_t c = 0; c < s.size(); ++c) {
      s[c] = std::clamp(s[c], upper[c], std::max(upper[c], lower[c]));
    }
    return s;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::StageFailure && e.code() != ErrorCode::NoElbow) throw;
    diag.trail.push_back({"rescue", fmt::format("failed: {}", e.what())});
  }
  return std::nullopt;
}

}  // namespace

Stage1VolumeResult run_stage1_3d(const Volume& volume, const PipelineConfig& config,
                                 Diagnostics& diag) {
  validate(volume);
  validate(config);
  const std::size_t nx = volume.nx;
  const std::size_t nz = volume.nz;
  Stage1VolumeResult out;

  Mask keep;
  WindowOptions wopt;
  if (config.onh_mask) {
    OnhMask onh = onh_mask(volume);
    if (onh.found) {
      diag.flags.push_back(fmt::format(
          "optic nerve head masked: centre ({:.1f}, {:.1f}), semi-axes {:.1f} and {:.1f}",
          onh.ellipse.center_x, onh.ellipse.center_z, onh.ellipse.semi_major,
          onh.ellipse.semi_minor));
      keep = onh.inclusion_mask(volume.ny);
      wopt.roi = &keep;
      out.onh = std::move(onh);
    }
  }
  const OnhMask* onh = out.onh ? &*out.onh : nullptr;

  const NodeGrid grid = normalize_features(window_nodes_3d(volume, config.stage1_block_3d, wopt));
  detail::Embedded map =
      detail::embed_nodes(grid, detail::stage1_settings(config, config.radius_stage1_3d), config,
                          "stage1");
  const Partition partition = detail::cluster_nodes(map, config.k_stage1, config);
  diag.maps.push_back(map.diag);
  diag.trail.push_back(
      {"stage1", fmt::format("elbow k={}, clustering with k={}",
                             map.diag.k_elbow ? fmt::format("{}", *map.diag.k_elbow) : "none",
                             config.k_stage1)});
  require(!partition.coincident, ErrorCode::StageFailure,
          "stage 1: all nodes coincide in diffusion space, no distinct clusters");

  const std::vector<std::size_t> rank = detail::depth_ranks(partition, grid);
  const auto middle = static_cast<std::size_t>(
      std::find(rank.begin(), rank.end(), config.k_stage1 / 2) - rank.begin());
  ClusterEdges edges = extract_cluster_edges(partition, grid, middle);
  const std::size_t covered = finite_count(edges.top);
  const std::size_t open = onh ? nx * nz - static_cast<std::size_t>(std::count(
                                                  onh->xz.begin(), onh->xz.end(), 1))
                               : nx * nz;
  if (covered * 2 < open) {
    const std::vector<std::size_t> sizes = partition.cluster_sizes();
    std::string sizes_text;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      sizes_text += fmt::format("{}{}:{}(rank {})", c ? ", " : "", c, sizes[c], rank[c]);
    }
    fail(ErrorCode::StageFailure,
         fmt::format("stage 1: middle cluster spans {} of {} columns; clusters {}", covered, open,
                     sizes_text));
  }
  for (double& v : edges.top) v -= 0.5;
  for (double& v : edges.bottom) v += 0.5;
  mask_canal(edges.top, onh);
  mask_canal(edges.bottom, onh);
  const std::vector<double> coarse1 = smooth_surface(edges.top, nx, nz, config.smoothing, "stage1");
  const std::vector<double> coarse7 =
      smooth_surface(edges.bottom, nx, nz, config.smoothing, "stage1");

  const std::vector<bool> refined = refined_slices(nz, config);
  std::array<std::vector<double>, 6> found;  // 1, 7, 8, 9, 10, 11
  for (auto& f : found) f.assign(nx * nz, kNaN);
  std::vector<std::size_t> clamped(nz, 0);
  GradientSearchOptions gopt;
  gopt.half_window = config.gradient_half_window;
  gopt.column_half_width = config.gradient_columns;
  gopt.smoothing = config.smoothing;
  std::vector<std::size_t> work;
  for (std::size_t z = 0; z < nz; ++z) {
    if (refined[z]) work.push_back(z);
  }
  parallel_for(work.size(), config.threads, [&](std::size_t i) {
    const std::size_t z = work[i];
    const ImageSlice image = volume.slice(z);
    GradientSearchResult s1 =
        gradient_refine(image, row_of(coarse1, nx, z), config.surface1_polarity, gopt);
    GradientSearchResult s7 =
        gradient_refine(image, row_of(coarse7, nx, z), config.surface7_polarity, gopt);
    for (std::size_t x = 0; x < nx; ++x) s7.rows[x] = std::max(s7.rows[x], s1.rows[x]);
    OuterSurfaces outer = detect_outer_surfaces(image, s7.rows, config.surface8_polarity,
                                                config.outer_search_rows, gopt);
    clamped[z] = s1.clamped_columns + s7.clamped_columns + outer.clamped_columns;
    put_row(found[0], nx, z, s1.rows);
    put_row(found[1], nx, z, s7.rows);
    for (std::size_t s = 0; s < 4; ++s) put_row(found[2 + s], nx, z, outer.rows[s]);
  });
  for (std::size_t c : clamped) diag.clamped_columns += c;
  if (diag.clamped_columns > 0) {
    diag.flags.push_back(fmt::format("gradient search clamped at the image border in {} columns",
                                     diag.clamped_columns));
  }
  for (auto& f : found) {
    if (onh) {
      // Gradients inside the canal are meaningless; bridge it from the rim.
      for (std::size_t z = 0; z < nz; ++z) {
        if (!refined[z]) continue;
        std::vector<double> row = row_of(f, nx, z);
        for (std::size_t x = 0; x < nx; ++x) {
          if (onh->xz[x + nx * z]) row[x] = kNaN;
        }
        if (finite_count(row) > 0) put_row(f, nx, z, fill_gaps(row));
      }
    }
    interpolate_slices(f, nx, nz, refined);
  }
  diag.trail.push_back(
      {"gradient", fmt::format("gradient search on {} of {} slices", work.size(), nz)});

  out.surfaces = SurfaceSet(nx, nz);
  out.surfaces.axial_um = volume.spacing_um[1];
  out.surfaces.lateral_um = volume.spacing_um[0];
  out.surfaces.slice_um = volume.spacing_um[2];
  const std::array<std::size_t, 6> ids{kS1, kS7, kS8, kS8 + 1, kS10, kS11};
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Surface& s = out.surfaces.emplace(ids[i], Provenance::GradientRefined);
    s.rows = found[i];
    for (std::size_t z = 0; z < nz; ++z) {
      if (refined[z]) continue;
      for (std::size_t x = 0; x < nx; ++x) s.provenance[x + nx * z] = Provenance::Interpolated;
    }
  }
  enforce_ordering(out.surfaces);
  out.alignment = alignment_for(out.surfaces.at(kS10).rows);
  out.aligned = flatten_volume(volume, out.alignment);
  diag.trail.push_back({"flatten", fmt::format("surface 10 aligned to row {}", out.alignment.target)});
  return out;
}

SegmentationResult segment_3d(const Volume& volume, const PipelineConfig& config) {
  SegmentationResult result;
  Diagnostics& diag = result.diagnostics;
  Stage1VolumeResult st1 = run_stage1_3d(volume, config, diag);
  const OnhMask* onh = st1.onh ? &*st1.onh : nullptr;
  const std::size_t nx = volume.nx;
  const std::size_t nz = volume.nz;
  const std::vector<double> a1 = to_aligned(st1.surfaces.at(kS1).rows, st1.alignment);
  const std::vector<double> a7 = to_aligned(st1.surfaces.at(kS7).rows, st1.alignment);

  const Mask mask = band_mask_3d(st1.aligned, a1, a7, onh, 0.0);
  WindowOptions wopt;
  wopt.roi = &mask;
  const NodeGrid grid =
      normalize_features(window_nodes_3d(st1.aligned, config.stage2_block_3d, wopt));
  const std::size_t max_k = config.auto_cluster_protocol ? 7 : config.k_stage2;
  detail::Embedded map =
      detail::embed_nodes(grid, detail::stage2_settings(config, max_k), config, "stage2");
  std::size_t k = config.k_stage2;
  if (config.auto_cluster_protocol) {
    if (map.diag.k_elbow) {
      k = std::clamp<std::size_t>(*map.diag.k_elbow, 2, 7);
      if (k != *map.diag.k_elbow) {
        diag.flags.push_back(fmt::format("stage 2 elbow k={} clamped to {}", *map.diag.k_elbow, k));
      }
    } else {
      diag.flags.push_back("stage 2: no eigenvalue elbow, using the configured k");
    }
    diag.trail.push_back(
        {"step1", fmt::format("elbow k={}, clustering with k={}",
                              map.diag.k_elbow ? fmt::format("{}", *map.diag.k_elbow) : "none", k)});
  } else {
    diag.trail.push_back({"stage2", fmt::format("fixed k={}", k)});
  }
  const Partition p = detail::cluster_nodes(map, k, config);
  diag.maps.push_back(map.diag);
  if (p.tiny_cluster) diag.flags.push_back("stage2: tiny cluster");
  const ColumnBoundaries b = column_boundaries(st1.aligned, grid, p, 2);
  std::vector<std::vector<double>> boundaries;
  for (const auto& curve : b.curves) {
    boundaries.push_back(smooth_surface(curve, nx, nz, config.smoothing, "stage2"));
  }
  detail::order_between(boundaries, a1, a7);

  const detail::LabelPlan plan = detail::plan_labels(boundaries, a1, a7, config);
  diag.protocol_path = plan.path;
  diag.trail.push_back({"protocol", fmt::format("path {}: {}", plan.path, plan.detail)});

  result.surfaces = st1.surfaces;
  auto place = [&](std::size_t id, const std::vector<double>& aligned_rows) {
    std::vector<double> rows = from_aligned(aligned_rows, st1.alignment);
    mask_canal(rows, onh);
    result.surfaces.set(id, rows, Provenance::Clustered);
  };
  for (std::size_t i = 0; i < plan.labels.size(); ++i) place(plan.labels[i], boundaries[i]);
  if (plan.rescue) {
    if (auto found = rescue_3d(st1.aligned, boundaries[0], boundaries[1], onh, config, diag)) {
      place(kS3, *found);
      diag.trail.push_back({"step5", "boundary 3 recovered by the k=2 map"});
    } else {
      diag.flags.push_back("boundary 3 missing: rescue map found no separation");
      diag.trail.push_back({"step5", "boundary 3 reported missing"});
    }
  }
  for (std::size_t s : {kS1, kS7, kS8, kS8 + 1, kS10, kS11}) mask_canal(result.surfaces.at(s).rows, onh);
  enforce_ordering(result.surfaces);
  return result;
}

}  // namespace dmseg
