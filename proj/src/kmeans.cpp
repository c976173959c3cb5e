#include "ldebm/kmeans.hpp"

#include <limits>
#include <stdexcept>

#include "ldebm/rng.hpp"

namespace ldebm {

namespace {

Eigen::MatrixXd plus_plus_seed(const Eigen::MatrixXd& x, int k, Rng& rng) {
  const Eigen::Index n = x.cols();
  Eigen::MatrixXd c(x.rows(), k);
  c.col(0) = x.col(static_cast<Eigen::Index>(rng.below(n)));
  Eigen::VectorXd d2 = (x.colwise() - c.col(0)).colwise().squaredNorm().transpose();
  for (int m = 1; m < k; ++m) {
    const double total = d2.sum();
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2(i);
        if (u < acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(n));
    }
    c.col(m) = x.col(pick);
    d2 = d2.cwiseMin((x.colwise() - c.col(m)).colwise().squaredNorm().transpose());
  }
  return c;
}

int nearest(const Eigen::MatrixXd& c, const Eigen::VectorXd& p) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; m < c.cols(); ++m) {
    const double d = (c.col(m) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(m);
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans_assign(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                           const Eigen::MatrixXd* init, int max_iter) {
  const Eigen::Index n = points.cols();
  if (k < 1) throw std::invalid_argument("kmeans: K must be >= 1");
  if (n < k) throw std::invalid_argument("kmeans: fewer points than clusters");
  KMeansResult res;
  Rng rng(seed);
  if (init) {
    if (init->rows() != points.rows() || init->cols() != k)
      throw std::invalid_argument("kmeans: initial centroids must be d x K");
    res.centroids = *init;
  } else {
    res.centroids = plus_plus_seed(points, k, rng);
  }
  res.labels.assign(n, -1);
  std::vector<int> count(k);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    std::fill(count.begin(), count.end(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = nearest(res.centroids, points.col(i));
      if (l != res.labels[i]) changed = true;
      res.labels[i] = l;
      ++count[l];
    }
    for (int m = 0; m < k; ++m) {
      if (count[m] > 0) continue;
      int largest = 0;
      for (int q = 1; q < k; ++q)
        if (count[q] > count[largest]) largest = q;
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (res.labels[i] != largest) continue;
        const double d = (points.col(i) - res.centroids.col(largest)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      res.labels[far] = m;
      --count[largest];
      ++count[m];
      res.centroids.col(m) = points.col(far);
      ++res.reseeds;
      changed = true;
    }
    res.iterations = it + 1;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(points.rows(), k);
    for (Eigen::Index i = 0; i < n; ++i) sums.col(res.labels[i]) += points.col(i);
    for (int m = 0; m < k; ++m) res.centroids.col(m) = sums.col(m) / count[m];
    if (!changed) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace ldebm
