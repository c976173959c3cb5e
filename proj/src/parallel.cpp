#include "ldebm/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace ldebm {

int num_workers() {
  if (const char* env = std::getenv("LDEBM_NUM_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for_columns(Eigen::Index n,
                          const std::function<void(Eigen::Index, Eigen::Index)>& fn,
                          Eigen::Index chunk) {
  if (n <= 0) return;
  const Eigen::Index n_chunks = (n + chunk - 1) / chunk;
  const int workers =
      static_cast<int>(std::min<Eigen::Index>(num_workers(), n_chunks));
  if (workers <= 1) {
    for (Eigen::Index c = 0; c < n_chunks; ++c)
      fn(c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::vector<std::exception_ptr> errors(n_chunks);
  std::atomic<Eigen::Index> next{0};
  auto work = [&] {
    for (Eigen::Index c; (c = next.fetch_add(1)) < n_chunks;) {
      try {
        fn(c * chunk, std::min(n, (c + 1) * chunk));
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ldebm
