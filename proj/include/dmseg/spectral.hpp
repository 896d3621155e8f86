#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "dmseg/graph_nodes.hpp"

namespace dmseg {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Symmetric Gaussian kernel on graph nodes, truncated at a geometric radius.
struct AffinityGraph {
  std::size_t n = 0;
  SparseMatrix weights;  // symmetric, unit diagonal, entries in [0, 1]
  double sigma_geo = 0.0;
  double sigma_feat = 0.0;
  double radius = 0.0;
};

struct AffinityOptions {
  // Multiplies each centroid axis before distances are taken. {1, 1, 1}
  // gives plain pixel-unit Euclidean distance.
  std::array<double, 3> axis_scale{1.0, 1.0, 1.0};
  int threads = 1;
};

/// For each node, the sorted indices of nodes strictly within `radius`
/// (itself included) under the scaled Euclidean metric.
std::vector<std::vector<std::size_t>> radius_neighbors(const NodeGrid& nodes, double radius,
                                                      const std::array<double, 3>& axis_scale,
                                                      int threads = 1);

AffinityGraph build_affinity(const NodeGrid& nodes, double sigma_geo, double sigma_feat,
                             double radius, const AffinityOptions& options = {});

/// Wraps an explicit symmetric non-negative matrix (diagonal must be positive).
AffinityGraph affinity_from_dense(const Eigen::MatrixXd& kernel);

inline constexpr double kDefaultSparsifyThreshold = 5e-6;

/// Row-stochastic random walk P = D^-1 k on the (sparsified) kernel.
struct MarkovChain {
  std::size_t n = 0;
  SparseMatrix kernel;  // sparsified symmetric kernel
  SparseMatrix transition;
  Eigen::VectorXd degree;
  Eigen::VectorXd phi0;  // stationary distribution
  double sparsify_threshold = kDefaultSparsifyThreshold;
  std::size_t dropped_pairs = 0;
};

MarkovChain normalize_markov(const AffinityGraph& graph,
                             double sparsify_threshold = kDefaultSparsifyThreshold);

struct SpectralOptions {
  std::size_t eigenpairs = 0;   // including the trivial pair; 0 means omega + 1
  std::size_t dense_limit = 500;  // chains up to this size use a dense solver
  std::size_t max_iterations = 10000;
  double tolerance = 1e-10;
  int threads = 1;
};

struct DiffusionEmbedding {
  int tau = 1;
  std::size_t omega = 0;
  double delta = 0.01;
  std::size_t q_tau = 0;
  Eigen::VectorXd eigenvalues;  // descending, eigenvalues(0) == 1
  Eigen::MatrixXd right;        // column l is psi_l, phi0-orthonormal
  Eigen::MatrixXd left;         // column l is phi_l = phi0 * psi_l
  Eigen::MatrixXd coords;       // row i is Psi_tau(i), length omega
  double max_residual = 0.0;
  std::size_t iterations = 0;

  std::size_t size() const { return static_cast<std::size_t>(right.rows()); }
  std::size_t pairs() const { return static_cast<std::size_t>(eigenvalues.size()); }
};

DiffusionEmbedding spectral_decompose(const MarkovChain& chain, std::size_t omega, int tau,
                                      double delta = 0.01, const SpectralOptions& options = {});

/// Squared diffusion distance from the spectral expansion over every
/// non-trivial pair the embedding carries (or the first `terms` of them).
double diffusion_distance(const DiffusionEmbedding& embedding, std::size_t x, std::size_t z,
                          int tau, std::optional<std::size_t> terms = std::nullopt);

/// Largest pairwise Euclidean distance between node centroids (scaled per axis).
double max_geometric_distance(const NodeGrid& nodes, const std::array<double, 3>& axis_scale);

/// Largest pairwise Euclidean distance between node feature vectors.
double max_feature_distance(const NodeGrid& nodes);

}  // namespace dmseg
