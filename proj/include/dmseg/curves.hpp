#pragma once

#include <cstddef>
#include <vector>

#include "dmseg/coarse_grain.hpp"
#include "dmseg/graph_nodes.hpp"

namespace dmseg {

struct SmoothingOptions {
  double spline_lambda = 20.0;      // second-difference penalty of the smoothing spline
  std::size_t loess_window = 31;    // columns, odd
  double outlier_mads = 3.0;
  double outlier_floor = 1.0;       // px; residuals below this are never outliers
};

/// Dense smooth curve through sparse per-column samples (NaN = missing).
/// Gaps are filled linearly and held constant past the ends.
std::vector<double> smooth_curve(const std::vector<double>& points,
                                 const SmoothingOptions& options = {});

/// Linear gap fill with constant extrapolation; needs at least one finite value.
std::vector<double> fill_gaps(const std::vector<double>& points);

enum class EdgePolarity { Brightening, Darkening };

struct GradientSearchOptions {
  int half_window = 10;           // rows above and below the curve
  int min_offset = -1;            // when >= 0, search only [min_offset, half_window] below
  std::size_t column_half_width = 7;  // curve-following averaging across columns
  bool resmooth = true;
  SmoothingOptions smoothing{};
};

struct GradientSearchResult {
  std::vector<double> rows;
  std::size_t clamped_columns = 0;  // search window cut by the image border
};

/// Moves each column of `curve` to the strongest vertical intensity change of
/// the requested polarity within the search window. The gradient is the
/// central difference of intensities averaged along the curve shape.
GradientSearchResult gradient_refine(const ImageSlice& image, const std::vector<double>& curve,
                                     EdgePolarity polarity,
                                     const GradientSearchOptions& options = {});

struct OuterSurfaces {
  std::vector<std::vector<double>> rows;  // surfaces 8, 9, 10, 11
  std::size_t clamped_columns = 0;
};

/// Surfaces 8 to 11 found by alternating gradient searches below surface 7.
/// `first` is the polarity of surface 8; the rest alternate.
OuterSurfaces detect_outer_surfaces(const ImageSlice& image, const std::vector<double>& surface7,
                                    EdgePolarity first = EdgePolarity::Darkening,
                                    int search_rows = 10,
                                    const GradientSearchOptions& options = {});

struct AlignmentRecord {
  std::vector<int> shifts;  // added to a row to reach aligned coordinates
  int target = 0;
};

AlignmentRecord alignment_for(const std::vector<double>& surface10);

/// Shifts each column so that surface 10 becomes the row `target`; uncovered
/// pixels are 0.
ImageSlice flatten(const ImageSlice& image, const AlignmentRecord& record);
ImageSlice unflatten(const ImageSlice& aligned, const AlignmentRecord& record);

std::vector<double> to_aligned(const std::vector<double>& rows, const AlignmentRecord& record);
std::vector<double> from_aligned(const std::vector<double>& rows, const AlignmentRecord& record);

struct ClusterEdges {
  std::vector<double> top;     // topmost member row per column, NaN when absent
  std::vector<double> bottom;  // bottommost member row per column
};

/// Member-row extent of one cluster per image column. Works for 2D grids;
/// for 3D grids the columns are x + nx * z.
ClusterEdges extract_cluster_edges(const Partition& partition, const NodeGrid& grid,
                                   std::size_t cluster);

/// Column at which a slice is split for the second stage.
std::size_t split_left_right(const std::vector<double>& surface1);

}  // namespace dmseg
