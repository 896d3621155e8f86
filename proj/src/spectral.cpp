#include "dmseg/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "dmseg/lanczos.hpp"
#include "dmseg/parallel.hpp"

namespace dmseg {

namespace {

std::array<double, 3> scaled(const Node& node, const std::array<double, 3>& scale) {
  return {node.centroid[0] * scale[0], node.centroid[1] * scale[1], node.centroid[2] * scale[2]};
}

double squared_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double d0 = a[0] - b[0];
  const double d1 = a[1] - b[1];
  const double d2 = a[2] - b[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

double squared_feature_distance(const Node& a, const Node& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.features.size(); ++k) {
    const double d = a.features[k] - b.features[k];
    s += d * d;
  }
  return s;
}

struct CellKey {
  long long x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    const auto h = static_cast<unsigned long long>(k.x) * 73856093ULL ^
                   static_cast<unsigned long long>(k.y) * 19349663ULL ^
                   static_cast<unsigned long long>(k.z) * 83492791ULL;
    return static_cast<std::size_t>(h);
  }
};

void multiply(const SparseMatrix& a, const Eigen::VectorXd& x, Eigen::VectorXd& y, int threads) {
  y.resize(a.rows());
  const std::size_t rows = static_cast<std::size_t>(a.rows());
  const std::size_t blocks = std::min<std::size_t>(rows, 64);
  parallel_for(blocks, threads, [&](std::size_t b) {
    const std::size_t begin = b * rows / blocks;
    const std::size_t end = (b + 1) * rows / blocks;
    for (std::size_t r = begin; r < end; ++r) {
      double acc = 0.0;
      for (SparseMatrix::InnerIterator it(a, static_cast<Eigen::Index>(r)); it; ++it) {
        acc += it.value() * x(it.col());
      }
      y(static_cast<Eigen::Index>(r)) = acc;
    }
  });
}

}  // namespace

std::vector<std::vector<std::size_t>> radius_neighbors(const NodeGrid& nodes, double radius,
                                                      const std::array<double, 3>& axis_scale,
                                                      int threads) {
  require(radius > 0.0 && std::isfinite(radius), ErrorCode::Parameter,
          fmt::format("radius must be positive (got {})", radius));
  const std::size_t n = nodes.size();
  std::vector<std::array<double, 3>> points(n);
  for (std::size_t i = 0; i < n; ++i) points[i] = scaled(nodes.nodes[i], axis_scale);

  auto cell_of = [&](const std::array<double, 3>& p) {
    return CellKey{static_cast<long long>(std::floor(p[0] / radius)),
                   static_cast<long long>(std::floor(p[1] / radius)),
                   static_cast<long long>(std::floor(p[2] / radius))};
  };
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells;
  for (std::size_t i = 0; i < n; ++i) cells[cell_of(points[i])].push_back(i);

  const double r2 = radius * radius;
  std::vector<std::vector<std::size_t>> out(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const CellKey home = cell_of(points[i]);
    auto& row = out[i];
    for (long long dz = -1; dz <= 1; ++dz) {
      for (long long dy = -1; dy <= 1; ++dy) {
        for (long long dx = -1; dx <= 1; ++dx) {
          auto it = cells.find(CellKey{home.x + dx, home.y + dy, home.z + dz});
          if (it == cells.end()) continue;
          for (std::size_t j : it->second) {
            if (squared_distance(points[i], points[j]) < r2) row.push_back(j);
          }
        }
      }
    }
    std::sort(row.begin(), row.end());
  });
  return out;
}

AffinityGraph build_affinity(const NodeGrid& nodes, double sigma_geo, double sigma_feat,
                             double radius, const AffinityOptions& options) {
  require(!nodes.nodes.empty(), ErrorCode::Parameter, "affinity needs at least one node");
  require(sigma_geo > 0.0 && std::isfinite(sigma_geo), ErrorCode::Parameter,
          fmt::format("sigma_geo must be positive (got {})", sigma_geo));
  require(sigma_feat > 0.0 && std::isfinite(sigma_feat), ErrorCode::Parameter,
          fmt::format("sigma_feat must be positive (got {})", sigma_feat));
  require(radius > 0.0 && std::isfinite(radius), ErrorCode::Parameter,
          fmt::format("radius must be positive (got {})", radius));

  const std::size_t n = nodes.size();
  const std::size_t fdims = nodes.feature_dims();
  for (std::size_t i = 0; i < n; ++i) {
    const Node& node = nodes.nodes[i];
    require(!node.members.empty() && node.features.size() == fdims && fdims > 0, ErrorCode::Input,
            fmt::format("node {} has an undefined feature vector", i));
    for (double f : node.features) {
      require(std::isfinite(f), ErrorCode::Input, fmt::format("node {} has a non-finite feature", i));
    }
  }

  const auto neighbors = radius_neighbors(nodes, radius, options.axis_scale, options.threads);
  const double geo_scale = 1.0 / (2.0 * sigma_geo * sigma_geo);
  const double feat_scale = 1.0 / (2.0 * sigma_feat * sigma_feat);

  std::vector<std::vector<std::pair<std::size_t, double>>> rows(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    const auto pi = scaled(nodes.nodes[i], options.axis_scale);
    auto& row = rows[i];
    row.reserve(neighbors[i].size());
    for (std::size_t j : neighbors[i]) {
      const double d2 = squared_distance(pi, scaled(nodes.nodes[j], options.axis_scale));
      const double f2 = squared_feature_distance(nodes.nodes[i], nodes.nodes[j]);
      row.emplace_back(j, std::exp(-d2 * geo_scale - f2 * feat_scale));
    }
  });

  AffinityGraph graph;
  graph.n = n;
  graph.sigma_geo = sigma_geo;
  graph.sigma_feat = sigma_feat;
  graph.radius = radius;
  graph.weights.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<int> counts(n);
  for (std::size_t i = 0; i < n; ++i) counts[i] = static_cast<int>(rows[i].size());
  graph.weights.reserve(counts);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [j, w] : rows[i]) {
      graph.weights.insert(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w;
    }
  }
  graph.weights.makeCompressed();
  return graph;
}

AffinityGraph affinity_from_dense(const Eigen::MatrixXd& kernel) {
  require(kernel.rows() == kernel.cols() && kernel.rows() > 0, ErrorCode::Parameter,
          "kernel must be a non-empty square matrix");
  const Eigen::Index n = kernel.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    require(kernel(i, i) > 0.0, ErrorCode::Input, fmt::format("kernel diagonal {} not positive", i));
    for (Eigen::Index j = 0; j < n; ++j) {
      require(kernel(i, j) >= 0.0 && kernel(i, j) == kernel(j, i), ErrorCode::Input,
              "kernel must be symmetric and non-negative");
    }
  }
  AffinityGraph graph;
  graph.n = static_cast<std::size_t>(n);
  graph.weights = kernel.sparseView();
  graph.weights.makeCompressed();
  return graph;
}

MarkovChain normalize_markov(const AffinityGraph& graph, double sparsify_threshold) {
  require(sparsify_threshold >= 0.0 && sparsify_threshold < 1.0, ErrorCode::Parameter,
          fmt::format("sparsify threshold {} outside [0, 1)", sparsify_threshold));
  const SparseMatrix& k = graph.weights;
  const Eigen::Index n = k.rows();
  require(n > 0 && k.cols() == n, ErrorCode::Parameter, "kernel must be a non-empty square matrix");

  Eigen::VectorXd raw_degree = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (SparseMatrix::InnerIterator it(k, i); it; ++it) raw_degree(i) += it.value();
  }

  // A pair is zeroed only when it is negligible in both normalized rows, so
  // the kept kernel stays symmetric and the chain stays reversible.
  MarkovChain chain;
  chain.n = static_cast<std::size_t>(n);
  chain.sparsify_threshold = sparsify_threshold;
  std::vector<Eigen::Triplet<double>> kept;
  kept.reserve(static_cast<std::size_t>(k.nonZeros()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (SparseMatrix::InnerIterator it(k, i); it; ++it) {
      const Eigen::Index j = it.col();
      const double w = it.value();
      if (w <= 0.0) continue;
      if (i != j && w < sparsify_threshold * raw_degree(i) && w < sparsify_threshold * raw_degree(j)) {
        ++chain.dropped_pairs;
        continue;
      }
      kept.emplace_back(i, j, w);
    }
  }
  chain.dropped_pairs /= 2;
  chain.kernel.resize(n, n);
  chain.kernel.setFromTriplets(kept.begin(), kept.end());
  chain.kernel.makeCompressed();

  chain.degree = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (SparseMatrix::InnerIterator it(chain.kernel, i); it; ++it) chain.degree(i) += it.value();
    if (!(chain.degree(i) > 0.0)) {
      fail(ErrorCode::DegenerateGraph,
           fmt::format("node {} has zero degree after sparsification", i));
    }
  }
  chain.transition = chain.kernel;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (SparseMatrix::InnerIterator it(chain.transition, i); it; ++it) {
      it.valueRef() /= chain.degree(i);
    }
  }
  chain.phi0 = chain.degree / chain.degree.sum();
  return chain;
}

DiffusionEmbedding spectral_decompose(const MarkovChain& chain, std::size_t omega, int tau,
                                      double delta, const SpectralOptions& options) {
  const std::size_t n = chain.n;
  require(tau >= 1, ErrorCode::Parameter, fmt::format("tau must be >= 1 (got {})", tau));
  require(omega >= 1 && omega < n, ErrorCode::Parameter,
          fmt::format("embedding dimension {} must satisfy 1 <= omega < n = {}", omega, n));
  require(delta > 0.0 && delta < 1.0, ErrorCode::Parameter, "delta must lie in (0, 1)");
  const std::size_t pairs = options.eigenpairs == 0 ? omega + 1 : options.eigenpairs;
  require(pairs >= omega + 1 && pairs <= n, ErrorCode::Parameter,
          fmt::format("cannot compute {} eigenpairs for omega = {} and n = {}", pairs, omega, n));

  const auto ni = static_cast<Eigen::Index>(n);
  const auto pi = static_cast<Eigen::Index>(pairs);
  const Eigen::VectorXd inv_sqrt_degree = chain.degree.cwiseSqrt().cwiseInverse();

  // Symmetric conjugate D^{1/2} P D^{-1/2} = D^{-1/2} k D^{-1/2}.
  SparseMatrix sym = chain.kernel;
  for (Eigen::Index i = 0; i < ni; ++i) {
    for (SparseMatrix::InnerIterator it(sym, i); it; ++it) {
      it.valueRef() *= inv_sqrt_degree(i) * inv_sqrt_degree(it.col());
    }
  }

  Eigen::VectorXd values(pi);
  Eigen::MatrixXd vectors(ni, pi);
  DiffusionEmbedding emb;
  if (n <= options.dense_limit || 3 * pairs > n) {
    const Eigen::MatrixXd dense_sym(sym);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense_sym);
    require(solver.info() == Eigen::Success, ErrorCode::Numerical, "dense eigensolver failed");
    values = solver.eigenvalues().reverse().head(pi);
    vectors = solver.eigenvectors().rowwise().reverse().leftCols(pi);
  } else {
    // The top pair is known exactly: sqrt(phi0) with eigenvalue 1.
    Eigen::MatrixXd top = chain.phi0.cwiseSqrt();
    top /= top.norm();
    LanczosOptions lopt;
    lopt.max_iterations = options.max_iterations;
    lopt.tolerance = options.tolerance;
    lopt.deflate = &top;
    const int threads = options.threads;
    auto op = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) { multiply(sym, x, y, threads); };
    LanczosResult res = lanczos_largest(n, op, pairs - 1, lopt);
    values(0) = 1.0;
    values.tail(pi - 1) = res.values;
    vectors.col(0) = top.col(0);
    vectors.rightCols(pi - 1) = res.vectors;
    emb.iterations = res.iterations;
  }

  {
    Eigen::VectorXd y;
    for (Eigen::Index l = 0; l < pi; ++l) {
      multiply(sym, vectors.col(l), y, options.threads);
      emb.max_residual = std::max(emb.max_residual, (y - values(l) * vectors.col(l)).norm());
    }
  }

  const Eigen::VectorXd sqrt_phi0 = chain.phi0.cwiseSqrt();
  emb.tau = tau;
  emb.omega = omega;
  emb.delta = delta;
  emb.eigenvalues = values;
  emb.right.resize(ni, pi);
  for (Eigen::Index l = 0; l < pi; ++l) {
    Eigen::VectorXd psi = vectors.col(l).cwiseQuotient(sqrt_phi0);
    if (l == 0) {
      if (psi.sum() < 0.0) psi = -psi;
    } else {
      Eigen::Index arg = 0;
      psi.cwiseAbs().maxCoeff(&arg);
      if (psi(arg) < 0.0) psi = -psi;
    }
    emb.right.col(l) = psi;
  }
  emb.left = emb.right.array().colwise() * chain.phi0.array();

  emb.coords.resize(ni, static_cast<Eigen::Index>(omega));
  for (std::size_t l = 1; l <= omega; ++l) {
    const auto li = static_cast<Eigen::Index>(l);
    emb.coords.col(li - 1) = std::pow(values(li), tau) * emb.right.col(li);
  }

  const double lead = std::pow(std::abs(values(1)), tau);
  emb.q_tau = 1;
  for (Eigen::Index j = 1; j < pi; ++j) {
    if (std::pow(std::abs(values(j)), tau) > delta * lead) emb.q_tau = static_cast<std::size_t>(j);
  }
  return emb;
}

double diffusion_distance(const DiffusionEmbedding& embedding, std::size_t x, std::size_t z,
                          int tau, std::optional<std::size_t> terms) {
  const std::size_t n = embedding.size();
  require(x < n && z < n, ErrorCode::Parameter,
          fmt::format("node index out of range ({}, {}) for n = {}", x, z, n));
  require(tau == embedding.tau, ErrorCode::Parameter,
          "diffusion distance requested at a different tau than the embedding");
  if (x == z) return 0.0;
  std::size_t last = embedding.pairs() - 1;
  if (terms) last = std::min(last, *terms);
  const auto xi = static_cast<Eigen::Index>(x);
  const auto zi = static_cast<Eigen::Index>(z);
  double sum = 0.0;
  for (std::size_t j = 1; j <= last; ++j) {
    const auto ji = static_cast<Eigen::Index>(j);
    const double diff = embedding.right(xi, ji) - embedding.right(zi, ji);
    sum += std::pow(embedding.eigenvalues(ji), 2 * tau) * diff * diff;
  }
  return sum;
}

double max_geometric_distance(const NodeGrid& nodes, const std::array<double, 3>& axis_scale) {
  const std::size_t n = nodes.size();
  std::vector<std::array<double, 3>> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = scaled(nodes.nodes[i], axis_scale);
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) best = std::max(best, squared_distance(pts[i], pts[j]));
  }
  return std::sqrt(best);
}

double max_feature_distance(const NodeGrid& nodes) {
  const std::size_t n = nodes.size();
  if (n < 2) return 0.0;
  if (nodes.feature_dims() == 1) {
    double lo = nodes.nodes[0].features[0];
    double hi = lo;
    for (const auto& node : nodes.nodes) {
      lo = std::min(lo, node.features[0]);
      hi = std::max(hi, node.features[0]);
    }
    return hi - lo;
  }
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      best = std::max(best, squared_feature_distance(nodes.nodes[i], nodes.nodes[j]));
    }
  }
  return std::sqrt(best);
}

}  // namespace dmseg
