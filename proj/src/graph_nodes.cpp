#include "dmseg/graph_nodes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "dmseg/error.hpp"

namespace dmseg {

ImageSlice Volume::slice(std::size_t z) const {
  require(z < nz, ErrorCode::Parameter, fmt::format("slice {} out of range (nz = {})", z, nz));
  ImageSlice out;
  out.rows = ny;
  out.cols = nx;
  out.axial_um = spacing_um[1];
  out.lateral_um = spacing_um[0];
  out.intensities.assign(intensities.begin() + static_cast<std::ptrdiff_t>(z * nx * ny),
                         intensities.begin() + static_cast<std::ptrdiff_t>((z + 1) * nx * ny));
  return out;
}

namespace {

void check_intensities(const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      fail(ErrorCode::Input, fmt::format("intensity {} at index {} outside [0, 1]", v, i));
    }
  }
}

}  // namespace

void validate(const ImageSlice& slice) {
  require(slice.rows >= 20 && slice.cols >= 20, ErrorCode::Input,
          fmt::format("image {}x{} smaller than 20x20", slice.rows, slice.cols));
  require(slice.intensities.size() == slice.rows * slice.cols, ErrorCode::Input,
          "image payload size does not match its dimensions");
  check_intensities(slice.intensities);
}

void validate(const Volume& volume) {
  require(volume.nx >= 15 && volume.ny >= 15 && volume.nz >= 15, ErrorCode::Input,
          fmt::format("volume {}x{}x{} has a dimension below 15", volume.nx, volume.ny, volume.nz));
  require(volume.intensities.size() == volume.nx * volume.ny * volume.nz, ErrorCode::Input,
          "volume payload size does not match its dimensions");
  check_intensities(volume.intensities);
}

std::vector<double> mean_gray_feature(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::Input, "feature requested for an empty block");
  double sum = 0.0;
  for (double v : values) sum += v;
  return {sum / static_cast<double>(values.size())};
}

namespace {

// Block b of count covering [0, extent): the last block absorbs the remainder.
struct Span1 {
  std::size_t begin;
  std::size_t end;
};

std::vector<Span1> block_spans(std::size_t extent, std::size_t block) {
  const std::size_t count = std::max<std::size_t>(1, extent / block);
  std::vector<Span1> spans(count);
  for (std::size_t b = 0; b < count; ++b) {
    spans[b].begin = b * block;
    spans[b].end = (b + 1 == count) ? extent : (b + 1) * block;
  }
  return spans;
}

void finish_node(Node& node, const std::vector<double>& intensities,
                 const FeatureExtractor& features) {
  std::vector<double> values(node.members.size());
  for (std::size_t i = 0; i < node.members.size(); ++i) values[i] = intensities[node.members[i]];
  node.features = features(values);
  for (double f : node.features) {
    require(std::isfinite(f), ErrorCode::Input, "feature extractor produced a non-finite value");
  }
}

}  // namespace

NodeGrid window_nodes_2d(const ImageSlice& slice, std::size_t block_h, std::size_t block_w,
                         const WindowOptions& options) {
  require(block_h >= 1 && block_w >= 1 && block_h <= slice.rows && block_w <= slice.cols,
          ErrorCode::Parameter,
          fmt::format("block {}x{} does not fit image {}x{}", block_h, block_w, slice.rows,
                      slice.cols));
  require(slice.intensities.size() == slice.rows * slice.cols, ErrorCode::Input,
          "image payload size does not match its dimensions");
  const Mask* roi = options.roi;
  require(roi == nullptr || roi->size() == slice.intensities.size(), ErrorCode::Input,
          "ROI mask size does not match the image");

  NodeGrid grid;
  grid.dims = 2;
  grid.domain = {slice.rows, slice.cols, 1};
  grid.block_shape = {block_h, block_w, 1};

  const auto row_spans = block_spans(slice.rows, block_h);
  const auto col_spans = block_spans(slice.cols, block_w);
  for (const auto& rs : row_spans) {
    for (const auto& cs : col_spans) {
      Node node;
      double sr = 0.0;
      double sc = 0.0;
      for (std::size_t r = rs.begin; r < rs.end; ++r) {
        for (std::size_t c = cs.begin; c < cs.end; ++c) {
          const std::size_t idx = r * slice.cols + c;
          if (roi != nullptr && (*roi)[idx] == 0) continue;
          node.members.push_back(idx);
          sr += static_cast<double>(r);
          sc += static_cast<double>(c);
        }
      }
      const double area = static_cast<double>((rs.end - rs.begin) * (cs.end - cs.begin));
      if (node.members.empty() ||
          static_cast<double>(node.members.size()) < options.min_inside_fraction * area) {
        continue;
      }
      const double m = static_cast<double>(node.members.size());
      node.centroid = {sr / m, sc / m, 0.0};
      finish_node(node, slice.intensities, options.features);
      grid.nodes.push_back(std::move(node));
    }
  }
  require(!grid.nodes.empty(), ErrorCode::Input, "region of interest contains no graph nodes");
  return grid;
}

NodeGrid window_nodes_3d(const Volume& volume, std::array<std::size_t, 3> block,
                         const WindowOptions& options) {
  const std::array<std::size_t, 3> dims{volume.nx, volume.ny, volume.nz};
  for (int a = 0; a < 3; ++a) {
    require(block[a] >= 1 && block[a] <= dims[a], ErrorCode::Parameter,
            fmt::format("block {}x{}x{} does not fit volume {}x{}x{}", block[0], block[1],
                        block[2], dims[0], dims[1], dims[2]));
  }
  require(volume.intensities.size() == volume.nx * volume.ny * volume.nz, ErrorCode::Input,
          "volume payload size does not match its dimensions");
  const Mask* roi = options.roi;
  require(roi == nullptr || roi->size() == volume.intensities.size(), ErrorCode::Input,
          "ROI mask size does not match the volume");

  NodeGrid grid;
  grid.dims = 3;
  grid.domain = dims;
  grid.block_shape = block;

  const auto xs = block_spans(volume.nx, block[0]);
  const auto ys = block_spans(volume.ny, block[1]);
  const auto zs = block_spans(volume.nz, block[2]);
  for (const auto& zspan : zs) {
    for (const auto& yspan : ys) {
      for (const auto& xspan : xs) {
        Node node;
        double sx = 0.0;
        double sy = 0.0;
        double sz = 0.0;
        for (std::size_t z = zspan.begin; z < zspan.end; ++z) {
          for (std::size_t y = yspan.begin; y < yspan.end; ++y) {
            for (std::size_t x = xspan.begin; x < xspan.end; ++x) {
              const std::size_t idx = volume.index(x, y, z);
              if (roi != nullptr && (*roi)[idx] == 0) continue;
              node.members.push_back(idx);
              sx += static_cast<double>(x);
              sy += static_cast<double>(y);
              sz += static_cast<double>(z);
            }
          }
        }
        const double volume_count = static_cast<double>(
            (xspan.end - xspan.begin) * (yspan.end - yspan.begin) * (zspan.end - zspan.begin));
        if (node.members.empty() ||
            static_cast<double>(node.members.size()) < options.min_inside_fraction * volume_count) {
          continue;
        }
        const double m = static_cast<double>(node.members.size());
        node.centroid = {sx / m, sy / m, sz / m};
        finish_node(node, volume.intensities, options.features);
        grid.nodes.push_back(std::move(node));
      }
    }
  }
  require(!grid.nodes.empty(), ErrorCode::Input, "region of interest contains no graph nodes");
  return grid;
}

NodeGrid normalize_features(NodeGrid grid) {
  require(grid.size() >= 2, ErrorCode::Input, "feature normalization needs at least two nodes");
  const std::size_t dims = grid.feature_dims();
  for (std::size_t d = 0; d < dims; ++d) {
    double lo = grid.nodes.front().features[d];
    double hi = lo;
    for (const auto& node : grid.nodes) {
      lo = std::min(lo, node.features[d]);
      hi = std::max(hi, node.features[d]);
    }
    const double range = hi - lo;
    for (auto& node : grid.nodes) {
      node.features[d] = range > 0.0 ? (node.features[d] - lo) / range : 0.0;
    }
  }
  return grid;
}

bool Ellipse::contains(double x, double z) const {
  if (semi_major <= 0.0 || semi_minor <= 0.0) return false;
  const double dx = x - center_x;
  const double dz = z - center_z;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = (c * dx + s * dz) / semi_major;
  const double v = (-s * dx + c * dz) / semi_minor;
  return u * u + v * v <= 1.0;
}

Mask OnhMask::inclusion_mask(std::size_t ny) const {
  Mask mask(nx * ny * nz, 1);
  if (!found) return mask;
  for (std::size_t z = 0; z < nz; ++z) {
    for (std::size_t x = 0; x < nx; ++x) {
      if (xz[z * nx + x] == 0) continue;
      for (std::size_t y = 0; y < ny; ++y) mask[(z * ny + y) * nx + x] = 0;
    }
  }
  return mask;
}

OnhMask onh_mask(const Volume& volume) {
  OnhMask result;
  result.nx = volume.nx;
  result.nz = volume.nz;
  result.xz.assign(volume.nx * volume.nz, 0);

  std::vector<double> projection(volume.nx * volume.nz, 0.0);
  for (std::size_t z = 0; z < volume.nz; ++z) {
    for (std::size_t y = 0; y < volume.ny; ++y) {
      for (std::size_t x = 0; x < volume.nx; ++x) projection[z * volume.nx + x] += volume.at(x, y, z);
    }
  }
  for (double& p : projection) p /= static_cast<double>(volume.ny);

  const double n = static_cast<double>(projection.size());
  const double mean = std::accumulate(projection.begin(), projection.end(), 0.0) / n;
  double var = 0.0;
  for (double p : projection) var += (p - mean) * (p - mean);
  const double sd = std::sqrt(var / n);
  if (sd <= 1e-12) return result;
  const double threshold = mean - sd;

  // Largest 4-connected dark component.
  std::vector<int> label(projection.size(), -1);
  std::vector<std::size_t> best;
  std::vector<std::size_t> stack;
  int next_label = 0;
  for (std::size_t start = 0; start < projection.size(); ++start) {
    if (label[start] >= 0 || projection[start] >= threshold) continue;
    std::vector<std::size_t> component;
    stack.assign(1, start);
    label[start] = next_label;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      component.push_back(p);
      const std::size_t x = p % volume.nx;
      const std::size_t z = p / volume.nx;
      auto visit = [&](std::size_t q) {
        if (label[q] < 0 && projection[q] < threshold) {
          label[q] = next_label;
          stack.push_back(q);
        }
      };
      if (x > 0) visit(p - 1);
      if (x + 1 < volume.nx) visit(p + 1);
      if (z > 0) visit(p - volume.nx);
      if (z + 1 < volume.nz) visit(p + volume.nx);
    }
    ++next_label;
    if (component.size() > best.size()) best = std::move(component);
  }
  if (static_cast<double>(best.size()) <= 0.005 * n) return result;

  double cx = 0.0;
  double cz = 0.0;
  for (std::size_t p : best) {
    cx += static_cast<double>(p % volume.nx);
    cz += static_cast<double>(p / volume.nx);
  }
  const double m = static_cast<double>(best.size());
  cx /= m;
  cz /= m;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (std::size_t p : best) {
    const double dx = static_cast<double>(p % volume.nx) - cx;
    const double dz = static_cast<double>(p / volume.nx) - cz;
    cov(0, 0) += dx * dx;
    cov(0, 1) += dx * dz;
    cov(1, 1) += dz * dz;
  }
  cov(1, 0) = cov(0, 1);
  cov /= m;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const Eigen::Vector2d major = eig.eigenvectors().col(1);

  // A filled ellipse has variance a^2/4 along each semi-axis.
  result.ellipse.center_x = cx;
  result.ellipse.center_z = cz;
  result.ellipse.semi_major = 2.0 * std::sqrt(std::max(eig.eigenvalues()(1), 0.0));
  result.ellipse.semi_minor = 2.0 * std::sqrt(std::max(eig.eigenvalues()(0), 0.0));
  result.ellipse.angle = std::atan2(major(1), major(0));
  result.found = true;
  for (std::size_t z = 0; z < volume.nz; ++z) {
    for (std::size_t x = 0; x < volume.nx; ++x) {
      result.xz[z * volume.nx + x] =
          result.ellipse.contains(static_cast<double>(x), static_cast<double>(z)) ? 1 : 0;
    }
  }
  return result;
}

}  // namespace dmseg
