#include "sparse_infer/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace sparse_infer::simd {

namespace {

Level initial_level() {
  Level level = detected_level();
  if (const char* env = std::getenv("SPARSE_INFER_SIMD")) {
    const std::string v(env);
    if (v == "scalar") level = Level::scalar;
  }
  return level;
}

std::atomic<Level>& current() {
  static std::atomic<Level> level{initial_level()};
  return level;
}

}  // namespace

std::string_view to_string(Level level) { return level == Level::avx2 ? "avx2" : "scalar"; }

bool supported(Level level) {
  if (level == Level::scalar) return true;
#if defined(SPARSE_INFER_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  return detail::avx2_table() != nullptr && __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Level detected_level() { return supported(Level::avx2) ? Level::avx2 : Level::scalar; }

Level active_level() { return current().load(std::memory_order_relaxed); }

void set_active_level(Level level) {
  if (!supported(level)) throw ConfigError("SIMD level " + std::string(to_string(level)) + " is not supported here");
  current().store(level, std::memory_order_relaxed);
}

const KernelTable& table(Level level) {
  if (level == Level::avx2 && supported(Level::avx2)) return *detail::avx2_table();
  return detail::scalar_table();
}

}  // namespace sparse_infer::simd
