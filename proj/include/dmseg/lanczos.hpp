#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include <Eigen/Dense>

namespace dmseg {

/// y = A x for a symmetric operator A.
using SymmetricOperator = std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& y)>;

struct LanczosOptions {
  std::size_t basis_size = 0;          // 0: chosen from the requested count
  std::size_t max_iterations = 10000;  // operator applications
  double tolerance = 1e-10;            // absolute residual norm per Ritz pair
  std::uint64_t seed = 0x5eed5eedULL;  // start vector
  const Eigen::MatrixXd* deflate = nullptr;  // orthonormal columns kept out of the Krylov space
};

struct LanczosResult {
  Eigen::VectorXd values;   // descending
  Eigen::MatrixXd vectors;  // orthonormal columns
  double max_residual = 0.0;
  std::size_t iterations = 0;
};

/// Thick-restart Lanczos with full reorthogonalization for the `count`
/// algebraically largest eigenpairs. Throws ErrorCode::Numerical when the
/// iteration budget runs out before every residual reaches the tolerance.
LanczosResult lanczos_largest(std::size_t n, const SymmetricOperator& op, std::size_t count,
                              const LanczosOptions& options = {});

}  // namespace dmseg
