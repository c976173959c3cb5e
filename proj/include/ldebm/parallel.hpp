#pragma once

#include <functional>

#include <Eigen/Core>

namespace ldebm {

/// Worker cap: LDEBM_NUM_WORKERS if set to a positive integer, otherwise the
/// hardware concurrency (at least 1).
int num_workers();

/// Splits [0, n) into fixed-size column chunks and runs fn(begin, end) on
/// each, fanning out over up to num_workers() threads. Chunk boundaries do
/// not depend on the worker count, so results are identical for any
/// setting. The first failing chunk (lowest index) rethrows.
void parallel_for_columns(Eigen::Index n,
                          const std::function<void(Eigen::Index, Eigen::Index)>& fn,
                          Eigen::Index chunk = 128);

}  // namespace ldebm
