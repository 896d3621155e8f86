#include "dmseg/lanczos.hpp"

#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "dmseg/error.hpp"

namespace dmseg {

namespace {

void remove_deflated(const Eigen::MatrixXd* q, Eigen::VectorXd& w) {
  if (q == nullptr || q->cols() == 0) return;
  for (int pass = 0; pass < 2; ++pass) w.noalias() -= *q * (q->transpose() * w);
}

Eigen::VectorXd random_unit(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
  return v;
}

}  // namespace

LanczosResult lanczos_largest(std::size_t n, const SymmetricOperator& op, std::size_t count,
                              const LanczosOptions& options) {
  const Eigen::MatrixXd* q = options.deflate;
  const std::size_t deflated = q != nullptr ? static_cast<std::size_t>(q->cols()) : 0;
  require(n > deflated, ErrorCode::Parameter, "deflation space covers the whole operator");
  const std::size_t available = n - deflated;
  require(count >= 1 && count <= available, ErrorCode::Parameter,
          fmt::format("requested {} eigenpairs from an operator of dimension {}", count, available));

  std::size_t m = options.basis_size != 0 ? options.basis_size
                                          : std::max<std::size_t>(2 * count + 20, 50);
  m = std::clamp<std::size_t>(m, count + 1, available);
  if (m < count) m = count;
  const auto ni = static_cast<Eigen::Index>(n);
  const auto mi = static_cast<Eigen::Index>(m);

  std::mt19937_64 rng(options.seed);
  Eigen::MatrixXd basis(ni, mi + 1);
  Eigen::MatrixXd projected = Eigen::MatrixXd::Zero(mi, mi);

  auto orthogonalize = [&](Eigen::VectorXd& w, Eigen::Index cols, Eigen::VectorXd* coeffs) {
    for (int pass = 0; pass < 2; ++pass) {
      remove_deflated(q, w);
      if (cols == 0) continue;
      Eigen::VectorXd h = basis.leftCols(cols).transpose() * w;
      w.noalias() -= basis.leftCols(cols) * h;
      if (coeffs != nullptr) *coeffs += h;
    }
  };

  {
    Eigen::VectorXd v = random_unit(n, rng);
    orthogonalize(v, 0, nullptr);
    basis.col(0) = v / v.norm();
  }

  Eigen::VectorXd w(ni);
  std::size_t applications = 0;
  Eigen::Index start = 0;
  double beta_last = 0.0;
  Eigen::VectorXd theta;
  Eigen::MatrixXd ritz;

  while (true) {
    for (Eigen::Index j = start; j < mi; ++j) {
      op(basis.col(j), w);
      ++applications;
      Eigen::VectorXd h = Eigen::VectorXd::Zero(j + 1);
      orthogonalize(w, j + 1, &h);
      projected.col(j).head(j + 1) = h;
      projected.row(j).head(j + 1) = h.transpose();
      double beta = w.norm();
      if (beta < 1e-12) {
        // Invariant subspace: continue with a fresh direction.
        beta = 0.0;
        if (j + 1 <= mi) {
          Eigen::VectorXd fresh = random_unit(n, rng);
          orthogonalize(fresh, j + 1, nullptr);
          const double norm = fresh.norm();
          basis.col(j + 1) = norm > 0.0 ? Eigen::VectorXd(fresh / norm) : Eigen::VectorXd::Zero(ni);
        }
      } else {
        basis.col(j + 1) = w / beta;
      }
      beta_last = beta;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(projected);
    theta = solver.eigenvalues().reverse();
    ritz = solver.eigenvectors().rowwise().reverse();

    double worst = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      worst = std::max(worst, std::abs(beta_last * ritz(mi - 1, static_cast<Eigen::Index>(i))));
    }
    const bool exhausted = m == available;
    if (worst <= options.tolerance || exhausted) break;
    if (applications >= options.max_iterations) {
      fail(ErrorCode::Numerical,
           fmt::format("eigensolver did not converge after {} iterations (residual norm {:.3e})",
                       applications, worst));
    }

    const std::size_t keep = std::min(m - 1, count + std::max<std::size_t>((m - count) / 3, 1));
    const auto ki = static_cast<Eigen::Index>(keep);
    Eigen::MatrixXd kept = basis.leftCols(mi) * ritz.leftCols(ki);
    Eigen::VectorXd residual_dir = basis.col(mi);
    basis.leftCols(ki) = kept;
    basis.col(ki) = residual_dir;
    projected.setZero();
    for (Eigen::Index i = 0; i < ki; ++i) projected(i, i) = theta(i);
    start = ki;
  }

  const auto ci = static_cast<Eigen::Index>(count);
  LanczosResult result;
  result.values = theta.head(ci);
  result.vectors = basis.leftCols(mi) * ritz.leftCols(ci);
  Eigen::VectorXd y(ni);
  for (Eigen::Index i = 0; i < ci; ++i) {
    Eigen::VectorXd x = result.vectors.col(i);
    const double norm = x.norm();
    x /= norm;
    result.vectors.col(i) = x;
    op(x, y);
    remove_deflated(q, y);
    result.max_residual = std::max(result.max_residual, (y - result.values(i) * x).norm());
  }
  result.iterations = applications;
  return result;
}

}  // namespace dmseg
