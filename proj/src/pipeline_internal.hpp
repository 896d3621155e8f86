#pragma once

// Pieces shared by the 2D and 3D drivers.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "dmseg/coarse_grain.hpp"
#include "dmseg/model_select.hpp"
#include "dmseg/pipeline.hpp"
#include "dmseg/spectral.hpp"

namespace dmseg::detail {

struct Embedded {
  MarkovChain chain;
  DiffusionEmbedding embedding;
  MapDiagnostics diag;
};

struct EmbedSettings {
  double radius = 3.0;          // in block diagonals
  double lateral_scale = 1.0;   // multiplies lateral distances
  std::size_t elbow_window = 9;
  double elbow_epsilon = 1e-6;
  std::size_t max_k = 2;
};

EmbedSettings stage1_settings(const PipelineConfig& config, double radius);
EmbedSettings stage2_settings(const PipelineConfig& config, std::size_t max_k);

/// Kernel, walk and spectrum for a node grid. Distances are in block units.
Embedded embed_nodes(const NodeGrid& grid, const EmbedSettings& settings,
                     const PipelineConfig& config, std::string name);

/// Elbow of the leading `window` eigenvalues; empty when there is none.
std::optional<ClusterCountEstimate> spectrum_elbow(const Eigen::VectorXd& eigenvalues,
                                                  std::size_t window, double epsilon);

Partition cluster_nodes(Embedded& map, std::size_t k, const PipelineConfig& config);

/// Cluster ranks ordered by the mean depth of their member pixels.
std::vector<std::size_t> depth_ranks(const Partition& partition, const NodeGrid& grid);

/// Mean feature gap between the two clusters of a 2-partition over the pooled SD.
double cluster_separation(const Partition& partition, const NodeGrid& grid);

struct StepFit {
  std::vector<double> boundaries;  // k-1 pixel-edge rows
  std::size_t mismatches = 0;
};

/// Least-disagreement non-decreasing step fit of one column of cluster ranks
/// (entries ordered by row).
StepFit fit_column_steps(const std::vector<std::size_t>& rows,
                         const std::vector<std::size_t>& ranks, std::size_t k);

struct LabelPlan {
  std::vector<std::size_t> labels;  // surface index per found boundary
  bool rescue = false;              // run the k=2 map between boundaries 0 and 1
  std::string path;
  std::string detail;
};

/// Cluster-count protocol on the found inner boundaries (top to bottom); the
/// cluster count is boundaries + 1.
LabelPlan plan_labels(const std::vector<std::vector<double>>& boundaries,
                      const std::vector<double>& s1, const std::vector<double>& s7,
                      const PipelineConfig& config);

/// Clamps inner curves into [upper, lower] and keeps them ordered.
void order_between(std::vector<std::vector<double>>& curves, const std::vector<double>& upper,
                   const std::vector<double>& lower);

}  // namespace dmseg::detail
