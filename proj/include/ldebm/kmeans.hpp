#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace ldebm {

struct KMeansResult {
  std::vector<int> labels;    // one per column of the input
  Eigen::MatrixXd centroids;  // d x K
  int iterations = 0;
  int reseeds = 0;            // empty-cluster repairs performed
  bool converged = false;
};

/// Lloyd's algorithm on the columns of `points` (d x B). Seeds with
/// k-means++ unless `init` (d x K) is given. An empty cluster takes the point
/// farthest from its centroid inside the currently largest cluster.
KMeansResult kmeans_assign(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                           const Eigen::MatrixXd* init = nullptr, int max_iter = 20);

}  // namespace ldebm
