#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

namespace sparse_infer {

// Runs body(i) for i in [0, n) on up to `workers` OpenMP threads with a static
// schedule. Iterations must write disjoint outputs. The first exception thrown
// by any iteration is rethrown after the join.
template <typename Body>
void parallel_for(std::size_t n, int workers, Body&& body) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto count = static_cast<long long>(n);
#pragma omp parallel for num_threads(workers) schedule(static)
  for (long long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace sparse_infer
