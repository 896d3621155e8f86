#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmseg/coarse_grain.hpp"
#include "dmseg/curves.hpp"
#include "dmseg/graph_nodes.hpp"
#include "dmseg/surfaces.hpp"

namespace dmseg {

struct PipelineConfig {
  // Node shapes: 2D {rows, cols}; 3D {x, y, z}.
  std::array<std::size_t, 2> stage1_block_2d{10, 10};
  std::array<std::size_t, 2> stage2_block_2d{2, 20};
  std::array<std::size_t, 3> stage1_block_3d{10, 10, 10};
  std::array<std::size_t, 3> stage2_block_3d{15, 1, 15};

  std::size_t k_stage1 = 3;
  std::size_t k_stage2 = 6;
  int tau = 1;
  double sigma_factor = 0.15;
  double sparsify_threshold = 5e-6;
  // Kernel radius in block diagonals (distances are measured in block units).
  double radius_stage1_2d = 3.0;
  double radius_stage1_3d = 3.0;
  double radius_stage2 = 3.0;
  // Eigenvalues (trivial included) handed to the elbow rule per stage.
  std::size_t elbow_window_stage1 = 6;
  std::size_t elbow_window_stage2 = 9;
  double elbow_epsilon_stage1 = 1e-6;
  double elbow_epsilon_stage2 = 0.01;
  // Lateral distances are multiplied by these before the kernel is built.
  double lateral_scale_stage1 = 0.5;
  double lateral_scale_stage2 = 1.0;
  double lateral_scale_rescue = 0.25;

  int gradient_half_window = 10;
  std::size_t gradient_columns = 7;  // half width of the along-curve average
  int outer_search_rows = 10;
  EdgePolarity surface1_polarity = EdgePolarity::Brightening;
  EdgePolarity surface7_polarity = EdgePolarity::Brightening;
  EdgePolarity surface8_polarity = EdgePolarity::Darkening;

  std::size_t restarts = 20;
  std::uint64_t seed = 1;
  SmoothingOptions smoothing{};

  std::size_t seam_columns = 5;
  std::size_t slice_step_3d = 10;  // gradient search on every n-th slice
  bool pathology_mode = false;     // gradient search on every slice
  bool auto_cluster_protocol = true;
  double rescue_min_separation = 1.0;   // cluster mean gap over pooled SD
  double rescue_min_agreement = 0.85;   // pixels consistent with a per-column step
  double rescue_min_coverage = 0.5;     // columns holding both clusters
  double rescue_margin = 2.0;          // px kept clear of the bounding curves
  bool onh_mask = false;  // exclude a detected optic nerve head canal (3D)
  // Nominal depths of surfaces 2 to 6a as fractions of the span from surface 1
  // to 7; used to name boundaries when layers merge.
  std::array<double, 6> layer_depth_prior{0.17, 0.30, 0.43, 0.57, 0.70, 0.88};

  int threads = 1;
};

void validate(const PipelineConfig& config);

/// One diffusion map run.
struct MapDiagnostics {
  std::string name;
  std::size_t nodes = 0;
  double sigma_geo = 0.0;
  double sigma_feat = 0.0;
  double radius = 0.0;
  std::vector<double> eigenvalues;
  std::optional<std::size_t> k_elbow;  // empty: no elbow
  double elbow_confidence = 0.0;
  std::size_t k_used = 0;
  std::vector<std::size_t> cluster_sizes;
  bool tiny_cluster = false;
  bool coincident = false;
};

struct TrailEntry {
  std::string step;
  std::string detail;
};

struct Diagnostics {
  std::vector<MapDiagnostics> maps;
  std::vector<TrailEntry> trail;
  std::vector<std::string> flags;
  std::size_t clamped_columns = 0;
  std::size_t split_column = 0;
  std::string protocol_path;  // e.g. "3a", "4a", "4b", "4c", "fixed"
};

struct Stage1Result {
  SurfaceSet surfaces;  // 1, 7, 8, 9, 10, 11
  AlignmentRecord alignment;
  ImageSlice aligned;
  Partition partition;
  NodeGrid grid;
  std::size_t middle_cluster = 0;
};

Stage1Result run_stage1_2d(const ImageSlice& slice, const PipelineConfig& config,
                           Diagnostics& diagnostics);

/// Inner boundaries found in the aligned image, top to bottom.
struct Stage2Result {
  std::vector<std::vector<double>> boundaries;  // aligned rows per column
  std::size_t k_elbow = 0;                      // 0: no elbow on any side
  std::size_t k_used = 0;
};

Stage2Result run_stage2_2d(const ImageSlice& aligned, const std::vector<double>& s1,
                           const std::vector<double>& s7, const PipelineConfig& config,
                           Diagnostics& diagnostics);

struct SegmentationResult {
  SurfaceSet surfaces;
  Diagnostics diagnostics;
};

/// Full 2D pipeline: both stages, the cluster-count protocol and the rescue map.
SegmentationResult segment_2d(const ImageSlice& slice, const PipelineConfig& config);

struct Stage1VolumeResult {
  SurfaceSet surfaces;  // 1, 7, 8, 9, 10, 11 on the (x, z) grid
  AlignmentRecord alignment;  // one shift per (x, z) column
  Volume aligned;
  std::optional<OnhMask> onh;
};

/// Stage 1 on a volume: cube nodes, gradient search on every slice_step_3d-th
/// slice (every slice in pathology mode) and linear interpolation in between.
Stage1VolumeResult run_stage1_3d(const Volume& volume, const PipelineConfig& config,
                                 Diagnostics& diagnostics);

/// Full 3D pipeline; stage 2 runs on the whole volume without a split.
SegmentationResult segment_3d(const Volume& volume, const PipelineConfig& config);

/// Fraction of nodes whose cluster, ranked by mean row, matches the band
/// (0: above surface 1, 1: between 1 and 7, 2: below 7) of their centroid.
double stage1_band_purity(const SurfaceSet& truth, const ImageSlice& slice,
                          const PipelineConfig& config);

}  // namespace dmseg
