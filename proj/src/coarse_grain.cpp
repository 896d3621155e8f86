#include "dmseg/coarse_grain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "dmseg/parallel.hpp"

namespace dmseg {

std::vector<std::size_t> Partition::cluster_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t a : assign) ++sizes[a];
  return sizes;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Weighted {
  Eigen::MatrixXd centroids;
  Eigen::VectorXd masses;
};

Weighted weighted_centroids(const std::vector<std::size_t>& assign, std::size_t k,
                            const Eigen::MatrixXd& coords, const Eigen::VectorXd& phi0) {
  Weighted w;
  w.centroids = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), coords.cols());
  w.masses = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  for (std::size_t x = 0; x < assign.size(); ++x) {
    const auto c = static_cast<Eigen::Index>(assign[x]);
    const auto xi = static_cast<Eigen::Index>(x);
    w.centroids.row(c) += phi0(xi) * coords.row(xi);
    w.masses(c) += phi0(xi);
  }
  std::vector<std::size_t> last(k, assign.size());
  std::vector<std::size_t> count(k, 0);
  for (std::size_t x = 0; x < assign.size(); ++x) {
    ++count[assign[x]];
    last[assign[x]] = x;
  }
  for (Eigen::Index c = 0; c < w.centroids.rows(); ++c) {
    const auto cu = static_cast<std::size_t>(c);
    if (count[cu] == 1) {
      w.centroids.row(c) = coords.row(static_cast<Eigen::Index>(last[cu]));  // exact for singletons
    } else if (w.masses(c) > 0.0) {
      w.centroids.row(c) /= w.masses(c);
    }
  }
  return w;
}

double objective(const std::vector<std::size_t>& assign, const Eigen::MatrixXd& centroids,
                 const Eigen::MatrixXd& coords, const Eigen::VectorXd& phi0) {
  double d = 0.0;
  for (std::size_t x = 0; x < assign.size(); ++x) {
    const auto xi = static_cast<Eigen::Index>(x);
    d += phi0(xi) *
         (coords.row(xi) - centroids.row(static_cast<Eigen::Index>(assign[x]))).squaredNorm();
  }
  return d;
}

struct RunResult {
  std::vector<std::size_t> assign;
  double distortion = 0.0;
  std::uint64_t seed = 0;
};

RunResult lloyd(const Eigen::MatrixXd& coords, const Eigen::VectorXd& phi0, std::size_t k,
                std::uint64_t seed, std::size_t max_iterations) {
  const std::size_t n = static_cast<std::size_t>(coords.rows());
  const auto ki = static_cast<Eigen::Index>(k);
  std::mt19937_64 rng(seed);

  // Farthest-point seeding from a random first centre.
  Eigen::MatrixXd centres(ki, coords.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  centres.row(0) = coords.row(static_cast<Eigen::Index>(pick(rng)));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (Eigen::Index c = 1; c < ki; ++c) {
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t x = 0; x < n; ++x) {
      const auto xi = static_cast<Eigen::Index>(x);
      nearest[x] = std::min(nearest[x], (coords.row(xi) - centres.row(c - 1)).squaredNorm());
      if (nearest[x] > far_d) {
        far_d = nearest[x];
        far = x;
      }
    }
    centres.row(c) = coords.row(static_cast<Eigen::Index>(far));
  }

  std::vector<std::size_t> assign(n, k);
  std::vector<double> dist(n, 0.0);
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (std::size_t x = 0; x < n; ++x) {
      const auto xi = static_cast<Eigen::Index>(x);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < ki; ++c) {
        const double d = (coords.row(xi) - centres.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = static_cast<std::size_t>(c);
        }
      }
      if (assign[x] != best) changed = true;
      assign[x] = best;
      dist[x] = best_d;
    }

    // Reseed empty clusters at the point farthest from its own centre.
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t a : assign) ++sizes[a];
    for (std::size_t c = 0; c < k; ++c) {
      if (sizes[c] != 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t x = 0; x < n; ++x) {
        if (sizes[assign[x]] > 1 && dist[x] > far_d) {
          far_d = dist[x];
          far = x;
        }
      }
      if (far == n) break;
      --sizes[assign[far]];
      assign[far] = c;
      sizes[c] = 1;
      dist[far] = 0.0;
      changed = true;
    }

    const Weighted w = weighted_centroids(assign, k, coords, phi0);
    for (Eigen::Index c = 0; c < ki; ++c) {
      if (w.masses(c) > 0.0) centres.row(c) = w.centroids.row(c);
    }
    if (!changed) break;
  }

  RunResult out;
  out.assign = std::move(assign);
  out.distortion = objective(out.assign, centres, coords, phi0);
  out.seed = seed;
  return out;
}

Partition best_of(const Eigen::MatrixXd& coords, const Eigen::VectorXd& phi0, std::size_t k,
                  std::size_t restarts, std::uint64_t base_seed, const KMeansOptions& options) {
  std::vector<RunResult> runs(restarts);
  parallel_for(restarts, options.threads, [&](std::size_t r) {
    runs[r] = lloyd(coords, phi0, k, splitmix64(base_seed + r), options.max_iterations);
  });
  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r) {
    if (runs[r].distortion < runs[best].distortion) best = r;
  }
  Partition p = make_partition(runs[best].assign, k, coords, phi0);
  p.seed = runs[best].seed;
  for (const auto& run : runs) p.restart_distortions.push_back(run.distortion);
  return p;
}

}  // namespace

Partition make_partition(const std::vector<std::size_t>& assign, std::size_t k,
                         const Eigen::MatrixXd& coords, const Eigen::VectorXd& phi0) {
  require(assign.size() == static_cast<std::size_t>(coords.rows()) &&
              assign.size() == static_cast<std::size_t>(phi0.size()),
          ErrorCode::Input, "partition, coordinates and phi0 disagree on the node count");
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t a : assign) {
    require(a < k, ErrorCode::Input, fmt::format("cluster id {} out of range for k = {}", a, k));
    ++sizes[a];
  }
  for (std::size_t c = 0; c < k; ++c) {
    require(sizes[c] > 0, ErrorCode::Input, fmt::format("cluster {} is empty", c));
  }
  Partition p;
  p.k = k;
  p.assign = assign;
  Weighted w = weighted_centroids(assign, k, coords, phi0);
  p.centroids = std::move(w.centroids);
  p.masses = std::move(w.masses);
  p.distortion = objective(assign, p.centroids, coords, phi0);
  return p;
}

Partition embed_kmeans(const Eigen::MatrixXd& coords, const Eigen::VectorXd& phi0, std::size_t k,
                       const KMeansOptions& options) {
  const std::size_t n = static_cast<std::size_t>(coords.rows());
  require(k >= 2, ErrorCode::Parameter, fmt::format("k must be at least 2 (got {})", k));
  require(k <= n, ErrorCode::Parameter, fmt::format("k = {} exceeds the node count {}", k, n));
  require(options.restarts >= 1, ErrorCode::Parameter, "k-means needs at least one restart");
  require(static_cast<std::size_t>(phi0.size()) == n, ErrorCode::Input,
          "phi0 length does not match the coordinates");

  bool coincident = true;
  for (Eigen::Index i = 1; i < coords.rows() && coincident; ++i) {
    coincident = coords.row(i) == coords.row(0);
  }
  if (coincident) {
    Partition p = make_partition(std::vector<std::size_t>(n, 0), 1, coords, phi0);
    p.coincident = true;
    p.restart_distortions.assign(options.restarts, 0.0);
    return p;
  }

  Partition p = best_of(coords, phi0, k, options.restarts, options.seed, options);
  auto has_tiny = [&](const Partition& part) {
    for (std::size_t s : part.cluster_sizes()) {
      if (static_cast<double>(s) < options.tiny_fraction * static_cast<double>(n)) return true;
    }
    return false;
  };
  if (has_tiny(p)) {
    p = best_of(coords, phi0, k, 2 * options.restarts, splitmix64(options.seed ^ 0x7a11ULL),
                options);
    p.tiny_cluster = has_tiny(p);
  }
  return p;
}

double distortion(const Partition& partition, const Eigen::MatrixXd& coords,
                  const Eigen::VectorXd& phi0) {
  const Weighted w = weighted_centroids(partition.assign, partition.k, coords, phi0);
  return objective(partition.assign, w.centroids, coords, phi0);
}

double distortion_pairwise(const Partition& partition, const Eigen::MatrixXd& coords,
                           const Eigen::VectorXd& phi0) {
  std::vector<std::vector<std::size_t>> members(partition.k);
  for (std::size_t x = 0; x < partition.assign.size(); ++x) members[partition.assign[x]].push_back(x);
  double total = 0.0;
  for (const auto& set : members) {
    double mass = 0.0;
    for (std::size_t x : set) mass += phi0(static_cast<Eigen::Index>(x));
    if (mass <= 0.0) continue;
    double s = 0.0;
    for (std::size_t a = 0; a < set.size(); ++a) {
      const auto xa = static_cast<Eigen::Index>(set[a]);
      for (std::size_t b = a + 1; b < set.size(); ++b) {
        const auto xb = static_cast<Eigen::Index>(set[b]);
        s += phi0(xa) * phi0(xb) * (coords.row(xa) - coords.row(xb)).squaredNorm();
      }
    }
    // Unordered pairs counted once: the 1/2 of the ordered double sum cancels.
    total += s / mass;
  }
  return total;
}

CoarseGraph coarse_graph(const MarkovChain& chain, const DiffusionEmbedding& embedding,
                         const Partition& partition, int tau, std::size_t L) {
  const std::size_t n = chain.n;
  const std::size_t k = partition.k;
  require(tau >= 1, ErrorCode::Parameter, "tau must be >= 1");
  require(L < n && L + 1 <= embedding.pairs(), ErrorCode::Parameter,
          fmt::format("L = {} needs {} eigenpairs (embedding has {})", L, L + 1, embedding.pairs()));
  require(partition.assign.size() == n && embedding.size() == n, ErrorCode::Input,
          "partition and embedding must cover every node of the chain");
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t a : partition.assign) {
    require(a < k, ErrorCode::Input, "cluster id out of range");
    ++sizes[a];
  }
  for (std::size_t c = 0; c < k; ++c) {
    require(sizes[c] > 0, ErrorCode::Input, fmt::format("cluster {} is empty", c));
  }

  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd reach = Eigen::MatrixXd::Zero(ni, ki);  // P^tau applied to the indicators
  for (std::size_t x = 0; x < n; ++x) reach(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(partition.assign[x])) = 1.0;
  for (int t = 0; t < tau; ++t) reach = chain.transition * reach;

  CoarseGraph g;
  g.k = k;
  g.tau = tau;
  g.weights = Eigen::MatrixXd::Zero(ki, ki);
  g.mass = Eigen::VectorXd::Zero(ki);
  for (std::size_t x = 0; x < n; ++x) {
    const auto xi = static_cast<Eigen::Index>(x);
    const auto c = static_cast<Eigen::Index>(partition.assign[x]);
    g.weights.row(c) += chain.phi0(xi) * reach.row(xi);
    g.mass(c) += chain.phi0(xi);
  }
  g.transition = g.weights;
  for (Eigen::Index i = 0; i < ki; ++i) g.transition.row(i) /= g.weights.row(i).sum();

  const auto li = static_cast<Eigen::Index>(L + 1);
  g.coarse_left = Eigen::MatrixXd::Zero(ki, li);
  for (std::size_t x = 0; x < n; ++x) {
    g.coarse_left.row(static_cast<Eigen::Index>(partition.assign[x])) +=
        embedding.left.row(static_cast<Eigen::Index>(x)).head(li);
  }
  g.coarse_right = g.coarse_left.array().colwise() / g.mass.array();

  for (Eigen::Index l = 0; l < li; ++l) {
    const double lt = std::pow(embedding.eigenvalues(l), tau);
    const Eigen::VectorXd e =
        g.transition.transpose() * g.coarse_left.col(l) - lt * g.coarse_left.col(l);
    const Eigen::VectorXd f = g.transition * g.coarse_right.col(l) - lt * g.coarse_right.col(l);
    g.left_residual.push_back((e.array().square() / g.mass.array()).sum());
    g.right_residual.push_back((f.array().square() * g.mass.array()).sum());
  }

  // Distortion in the diffusion coordinates at this tau over every pair carried.
  const Eigen::Index pairs = static_cast<Eigen::Index>(embedding.pairs());
  Eigen::MatrixXd coords(ni, std::max<Eigen::Index>(pairs - 1, 1));
  coords.setZero();
  for (Eigen::Index l = 1; l < pairs; ++l) {
    coords.col(l - 1) = std::pow(embedding.eigenvalues(l), tau) * embedding.right.col(l);
  }
  g.distortion = distortion(partition, coords, chain.phi0);
  return g;
}

}  // namespace dmseg
