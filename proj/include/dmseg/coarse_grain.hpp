#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "dmseg/spectral.hpp"

namespace dmseg {

/// Clustering of graph nodes in diffusion space. Cluster ids are 0-based.
struct Partition {
  std::size_t k = 0;
  std::vector<std::size_t> assign;
  Eigen::MatrixXd centroids;  // k x dim, phi0-weighted means of the coordinates
  Eigen::VectorXd masses;     // coarse stationary mass of each cluster
  double distortion = 0.0;

  // Diagnostics from the k-means driver.
  std::vector<double> restart_distortions;
  bool coincident = false;     // every coordinate identical; one effective cluster
  bool tiny_cluster = false;   // a cluster under 1% of the nodes survived the re-run
  std::uint64_t seed = 0;      // seed of the winning restart

  std::vector<std::size_t> cluster_sizes() const;
};

struct KMeansOptions {
  std::size_t restarts = 20;
  std::uint64_t seed = 1;
  std::size_t max_iterations = 300;
  double tiny_fraction = 0.01;
  int threads = 1;
};

/// Weighted k-means on the diffusion coordinates (weights phi0). Returns the
/// restart with the smallest distortion.
Partition embed_kmeans(const Eigen::MatrixXd& coords, const Eigen::VectorXd& phi0, std::size_t k,
                       const KMeansOptions& options = {});

inline Partition embed_kmeans(const DiffusionEmbedding& embedding, const Eigen::VectorXd& phi0,
                              std::size_t k, const KMeansOptions& options = {}) {
  return embed_kmeans(embedding.coords, phi0, k, options);
}

/// Builds a partition (masses, centroids, distortion) from explicit labels.
Partition make_partition(const std::vector<std::size_t>& assign, std::size_t k,
                         const Eigen::MatrixXd& coords, const Eigen::VectorXd& phi0);

/// Sum over clusters of phi0-weighted squared distances to the centroid.
double distortion(const Partition& partition, const Eigen::MatrixXd& coords,
                  const Eigen::VectorXd& phi0);

/// The same quantity written as a weighted sum of within-cluster pairwise distances.
double distortion_pairwise(const Partition& partition, const Eigen::MatrixXd& coords,
                           const Eigen::VectorXd& phi0);

/// Coarse-grained random walk on the clusters of a partition.
struct CoarseGraph {
  std::size_t k = 0;
  int tau = 1;
  Eigen::MatrixXd weights;     // omega-tilde, symmetric
  Eigen::MatrixXd transition;  // row-stochastic
  Eigen::VectorXd mass;        // coarse stationary distribution
  Eigen::MatrixXd coarse_left;   // column l: phi-tilde_l
  Eigen::MatrixXd coarse_right;  // column l: psi-tilde_l
  std::vector<double> left_residual;   // ||e_l||^2 in the 1/mass norm
  std::vector<double> right_residual;  // ||f_l||^2 in the mass norm
  double distortion = 0.0;
};

/// L is the highest eigen-index carried to the coarse graph; the embedding
/// must hold at least L + 1 pairs.
CoarseGraph coarse_graph(const MarkovChain& chain, const DiffusionEmbedding& embedding,
                         const Partition& partition, int tau, std::size_t L);

}  // namespace dmseg
