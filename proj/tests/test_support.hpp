#pragma once

#include <random>

#include <Eigen/Dense>

#include "dmseg/spectral.hpp"

namespace testing_support {

// Symmetric kernel with unit diagonal; a path through every node keeps it connected.
inline Eigen::MatrixXd random_kernel(int n, std::mt19937_64& rng, double density = 0.5) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd k = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double w = u(rng) < density ? u(rng) : 0.0;
      if (j == i + 1) w = 0.05 + 0.9 * u(rng);
      k(i, j) = k(j, i) = w;
    }
  }
  return k;
}

// Two cliques of `size` nodes joined by one weak edge.
inline Eigen::MatrixXd two_clique_kernel(int size, double strong = 0.9, double weak = 0.01) {
  const int n = 2 * size;
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) k(i, j) = 1.0;
      else if ((i < size) == (j < size)) k(i, j) = strong;
    }
  }
  k(size - 1, size) = k(size, size - 1) = weak;
  return k;
}

inline Eigen::MatrixXd dense_transition(const dmseg::MarkovChain& chain) {
  return Eigen::MatrixXd(chain.transition);
}

}  // namespace testing_support
