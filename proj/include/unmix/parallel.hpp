#ifndef UNMIX_PARALLEL_HPP
#define UNMIX_PARALLEL_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace unmix {

/// Worker cap: UNMIX_THREADS if set to a positive integer, otherwise the
/// hardware concurrency. Unparsable or nonpositive values fall back to 1.
inline unsigned max_threads() {
  if (const char* env = std::getenv("UNMIX_THREADS")) {
    try {
      const long v = std::stol(env);
      return v >= 1 ? static_cast<unsigned>(v) : 1u;
    } catch (const std::exception&) {
      return 1u;
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw >= 1 ? hw : 1u;
}

/// Runs fn(i) for i in [0, n). Iterations must write disjoint state; there is
/// no reduction, so results are identical for any worker count.
template <typename Fn>
void parallel_for(Eigen::Index n, Fn&& fn) {
  const Eigen::Index workers =
      std::min<Eigen::Index>(static_cast<Eigen::Index>(max_threads()), n);
  if (workers <= 1 || n < 4) {
    for (Eigen::Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const Eigen::Index chunk = (n + workers - 1) / workers;
  for (Eigen::Index w = 0; w < workers; ++w) {
    const Eigen::Index lo = w * chunk;
    const Eigen::Index hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (Eigen::Index i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace unmix

#endif  // UNMIX_PARALLEL_HPP
