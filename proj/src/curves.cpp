#include "dmseg/curves.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <fmt/format.h>

#include "dmseg/error.hpp"

namespace dmseg {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Discrete cubic smoothing spline on a unit grid: (I + lambda D'D) f = y with
// D the second difference operator.
std::vector<double> smoothing_spline(const std::vector<double>& y, double lambda) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (n < 3 || lambda <= 0.0) return y;
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(n) * 5);
  const double stencil[3] = {1.0, -2.0, 1.0};
  Eigen::SparseMatrix<double> a(n, n);
  for (Eigen::Index i = 0; i + 2 < n; ++i) {
    for (int p = 0; p < 3; ++p) {
      for (int q = 0; q < 3; ++q) {
        entries.emplace_back(i + p, i + q, lambda * stencil[p] * stencil[q]);
      }
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) entries.emplace_back(i, i, 1.0);
  a.setFromTriplets(entries.begin(), entries.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(a);
  const Eigen::Map<const Eigen::VectorXd> rhs(y.data(), n);
  const Eigen::VectorXd f = solver.solve(rhs);
  return {f.data(), f.data() + n};
}

// Local quadratic regression with tri-cube weights.
std::vector<double> local_quadratic(const std::vector<double>& y, std::size_t window) {
  const std::size_t n = y.size();
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const double scale = static_cast<double>(half + 1);
  std::vector<double> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    const auto ci = static_cast<std::ptrdiff_t>(c);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, ci - half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, ci + half);
    for (std::ptrdiff_t j = lo; j <= hi; ++j) {
      const double d = static_cast<double>(j - ci);
      const double u = std::abs(d) / scale;
      const double t = 1.0 - u * u * u;
      const double w = t * t * t;
      const Eigen::Vector3d basis(1.0, d, d * d);
      normal += w * basis * basis.transpose();
      rhs += w * y[static_cast<std::size_t>(j)] * basis;
    }
    if (hi - lo >= 2) {
      const Eigen::Vector3d beta = normal.ldlt().solve(rhs);
      out[c] = beta(0);
    } else {
      out[c] = rhs(0) / normal(0, 0);
    }
  }
  return out;
}

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

std::vector<double> smooth_pass(const std::vector<double>& points, const SmoothingOptions& o) {
  return local_quadratic(smoothing_spline(fill_gaps(points), o.spline_lambda), o.loess_window);
}

}  // namespace

std::vector<double> fill_gaps(const std::vector<double>& points) {
  std::vector<double> out(points);
  std::size_t first = points.size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (std::isfinite(points[i])) {
      first = i;
      break;
    }
  }
  require(first < points.size(), ErrorCode::Input, "curve has no defined samples");
  std::size_t prev = first;
  for (std::size_t i = 0; i < first; ++i) out[i] = points[first];
  for (std::size_t i = first + 1; i < points.size(); ++i) {
    if (!std::isfinite(points[i])) continue;
    for (std::size_t j = prev + 1; j < i; ++j) {
      const double t = static_cast<double>(j - prev) / static_cast<double>(i - prev);
      out[j] = points[prev] + t * (points[i] - points[prev]);
    }
    prev = i;
  }
  for (std::size_t i = prev + 1; i < points.size(); ++i) out[i] = points[prev];
  return out;
}

std::vector<double> smooth_curve(const std::vector<double>& points, const SmoothingOptions& options) {
  const auto defined = static_cast<std::size_t>(
      std::count_if(points.begin(), points.end(), [](double v) { return std::isfinite(v); }));
  require(defined >= 4, ErrorCode::Input,
          fmt::format("smoothing needs at least 4 points, got {}", defined));
  require(options.loess_window >= 3, ErrorCode::Parameter, "regression window must be at least 3");

  const std::vector<double> first = smooth_pass(points, options);

  std::vector<double> residuals;
  residuals.reserve(defined);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (std::isfinite(points[i])) residuals.push_back(points[i] - first[i]);
  }
  const double center = median(residuals);
  std::vector<double> spread(residuals.size());
  std::transform(residuals.begin(), residuals.end(), spread.begin(),
                 [&](double r) { return std::abs(r - center); });
  const double mad = median(spread);
  const double limit = std::max(options.outlier_mads * mad, options.outlier_floor);

  std::vector<double> kept(points);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (std::isfinite(points[i]) && std::abs(points[i] - first[i] - center) > limit) {
      kept[i] = kNaN;
      ++dropped;
    }
  }
  if (dropped == 0) return first;
  if (defined - dropped < 4) return first;
  return smooth_pass(kept, options);
}

GradientSearchResult gradient_refine(const ImageSlice& image, const std::vector<double>& curve,
                                     EdgePolarity polarity, const GradientSearchOptions& options) {
  require(curve.size() == image.cols, ErrorCode::Input,
          fmt::format("curve has {} columns, image has {}", curve.size(), image.cols));
  require(options.half_window >= 1, ErrorCode::Parameter, "gradient half window must be >= 1");
  require(image.rows >= 3, ErrorCode::Input, "image too short for a gradient search");
  for (double v : curve) require(std::isfinite(v), ErrorCode::Input, "gradient search needs a dense curve");

  const auto rows = static_cast<long>(image.rows);
  const auto cols = static_cast<long>(image.cols);
  const auto a = static_cast<long>(options.column_half_width);
  const double sign = polarity == EdgePolarity::Brightening ? 1.0 : -1.0;
  const long lo_off = options.min_offset >= 0 ? options.min_offset : -options.half_window;
  const long hi_off = options.half_window;

  GradientSearchResult result;
  result.rows.assign(curve.size(), kNaN);
  std::vector<long> base(curve.size());
  for (std::size_t c = 0; c < curve.size(); ++c) base[c] = std::lround(curve[c]);

  std::vector<double> profile;
  for (long c = 0; c < cols; ++c) {
    const long center = base[static_cast<std::size_t>(c)];
    long first = center + lo_off - 1;
    long last = center + hi_off + 1;
    bool clamped = false;
    if (first < 0) {
      first = 0;
      clamped = true;
    }
    if (last > rows - 1) {
      last = rows - 1;
      clamped = true;
    }
    if (clamped) ++result.clamped_columns;
    if (last - first < 2) {
      result.rows[static_cast<std::size_t>(c)] = curve[static_cast<std::size_t>(c)];
      continue;
    }
    // Intensity profile averaged along the curve shape.
    profile.assign(static_cast<std::size_t>(last - first + 1), 0.0);
    for (long r = first; r <= last; ++r) {
      double sum = 0.0;
      int count = 0;
      for (long cc = std::max(0L, c - a); cc <= std::min(cols - 1, c + a); ++cc) {
        const long rr = r + base[static_cast<std::size_t>(cc)] - center;
        if (rr < 0 || rr >= rows) continue;
        sum += image.at(static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
        ++count;
      }
      profile[static_cast<std::size_t>(r - first)] = count > 0 ? sum / count : 0.0;
    }
    auto grad = [&](long r) {
      return sign * (profile[static_cast<std::size_t>(r + 1 - first)] -
                     profile[static_cast<std::size_t>(r - 1 - first)]);
    };
    long best = first + 1;
    double best_value = -std::numeric_limits<double>::infinity();
    for (long r = first + 1; r <= last - 1; ++r) {
      const double g = grad(r);
      if (g > best_value) {
        best_value = g;
        best = r;
      }
    }
    double offset = 0.0;
    if (best > first + 1 && best < last - 1) {
      const double gm = grad(best - 1);
      const double g0 = best_value;
      const double gp = grad(best + 1);
      const double denom = gm - 2.0 * g0 + gp;
      if (denom < 0.0) offset = std::clamp(0.5 * (gm - gp) / denom, -0.5, 0.5);
    }
    result.rows[static_cast<std::size_t>(c)] = static_cast<double>(best) + offset;
  }
  if (options.resmooth && result.rows.size() >= 4) {
    result.rows = smooth_curve(result.rows, options.smoothing);
  }
  return result;
}

OuterSurfaces detect_outer_surfaces(const ImageSlice& image, const std::vector<double>& surface7,
                                    EdgePolarity first, int search_rows,
                                    const GradientSearchOptions& options) {
  OuterSurfaces out;
  GradientSearchOptions o = options;
  o.half_window = search_rows;
  o.min_offset = 2;
  std::vector<double> prev = surface7;
  EdgePolarity polarity = first;
  for (int s = 0; s < 4; ++s) {
    GradientSearchResult found = gradient_refine(image, prev, polarity, o);
    out.clamped_columns += found.clamped_columns;
    for (std::size_t c = 0; c < prev.size(); ++c) found.rows[c] = std::max(found.rows[c], prev[c]);
    prev = found.rows;
    out.rows.push_back(std::move(found.rows));
    polarity = polarity == EdgePolarity::Brightening ? EdgePolarity::Darkening
                                                      : EdgePolarity::Brightening;
  }
  return out;
}

AlignmentRecord alignment_for(const std::vector<double>& surface10) {
  require(!surface10.empty(), ErrorCode::Input, "empty alignment surface");
  double sum = 0.0;
  for (double v : surface10) {
    require(std::isfinite(v), ErrorCode::Input, "alignment surface must be dense");
    sum += v;
  }
  AlignmentRecord record;
  const double target = std::round(sum / static_cast<double>(surface10.size()));
  record.target = static_cast<int>(target);
  record.shifts.resize(surface10.size());
  for (std::size_t c = 0; c < surface10.size(); ++c) {
    record.shifts[c] = static_cast<int>(std::lround(target - surface10[c]));
  }
  return record;
}

namespace {

ImageSlice shift_columns(const ImageSlice& image, const AlignmentRecord& record, int direction) {
  require(record.shifts.size() == image.cols, ErrorCode::Input,
          "alignment record does not match the image width");
  ImageSlice out = image;
  std::fill(out.intensities.begin(), out.intensities.end(), 0.0);
  const auto rows = static_cast<long>(image.rows);
  for (std::size_t c = 0; c < image.cols; ++c) {
    const long shift = direction * record.shifts[c];
    for (long r = 0; r < rows; ++r) {
      const long target = r + shift;
      if (target < 0 || target >= rows) continue;
      out.at(static_cast<std::size_t>(target), c) = image.at(static_cast<std::size_t>(r), c);
    }
  }
  return out;
}

}  // namespace

ImageSlice flatten(const ImageSlice& image, const AlignmentRecord& record) {
  return shift_columns(image, record, 1);
}

ImageSlice unflatten(const ImageSlice& aligned, const AlignmentRecord& record) {
  return shift_columns(aligned, record, -1);
}

std::vector<double> to_aligned(const std::vector<double>& rows, const AlignmentRecord& record) {
  require(rows.size() == record.shifts.size(), ErrorCode::Input, "alignment size mismatch");
  std::vector<double> out(rows);
  for (std::size_t c = 0; c < rows.size(); ++c) out[c] += record.shifts[c];
  return out;
}

std::vector<double> from_aligned(const std::vector<double>& rows, const AlignmentRecord& record) {
  require(rows.size() == record.shifts.size(), ErrorCode::Input, "alignment size mismatch");
  std::vector<double> out(rows);
  for (std::size_t c = 0; c < rows.size(); ++c) out[c] -= record.shifts[c];
  return out;
}

ClusterEdges extract_cluster_edges(const Partition& partition, const NodeGrid& grid,
                                   std::size_t cluster) {
  require(partition.assign.size() == grid.size(), ErrorCode::Input,
          "partition and node grid sizes differ");
  ClusterEdges edges;
  std::size_t columns = 0;
  std::size_t row_stride = 0;
  if (grid.dims == 2) {
    columns = grid.domain[1];
  } else {
    columns = grid.domain[0] * grid.domain[2];
    row_stride = grid.domain[0];
  }
  edges.top.assign(columns, kNaN);
  edges.bottom.assign(columns, kNaN);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (partition.assign[i] != cluster) continue;
    for (std::size_t m : grid.nodes[i].members) {
      std::size_t row = 0;
      std::size_t col = 0;
      if (grid.dims == 2) {
        row = m / grid.domain[1];
        col = m % grid.domain[1];
      } else {
        const std::size_t x = m % row_stride;
        const std::size_t rest = m / row_stride;
        row = rest % grid.domain[1];
        col = x + row_stride * (rest / grid.domain[1]);
      }
      const auto r = static_cast<double>(row);
      double& top = edges.top[col];
      double& bottom = edges.bottom[col];
      if (!(top <= r)) top = r;
      if (!(bottom >= r)) bottom = r;
    }
  }
  return edges;
}

std::size_t split_left_right(const std::vector<double>& surface1) {
  const std::size_t cols = surface1.size();
  const std::size_t middle = cols / 2;
  if (cols < 3) return middle;
  const auto [lo, hi] = std::minmax_element(surface1.begin(), surface1.end());
  if (*hi - *lo < 1.0) return middle;
  // Rows grow with depth, so the foveal pit is the deepest sample. Ties go to
  // the column nearest the centre.
  std::size_t best = middle;
  double best_row = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cols; ++c) {
    const double r = surface1[c];
    const auto dist = [&](std::size_t x) { return x > middle ? x - middle : middle - x; };
    if (r > best_row || (r == best_row && dist(c) < dist(best))) {
      best_row = r;
      best = c;
    }
  }
  if (best >= cols / 3 && best < (2 * cols) / 3) return best;
  return middle;
}

}  // namespace dmseg
