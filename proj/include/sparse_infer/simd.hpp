#pragma once

#include <cstddef>
#include <string_view>

#include "sparse_infer/tensor.hpp"

// Runtime-selected inner loops. Every variant reproduces the scalar reference
// bit for bit: lanes are independent output elements, and each lane performs
// the same float operations in the same order as the scalar loop.
namespace sparse_infer::simd {

enum class Level { scalar, avx2 };

std::string_view to_string(Level level);

// Best level the running CPU supports (and the build was compiled for).
Level detected_level();
bool supported(Level level);

// Level used by the kernels. Starts at detected_level(), lowered by the
// SPARSE_INFER_SIMD environment variable ("scalar" or "avx2").
Level active_level();
void set_active_level(Level level);

struct KernelTable {
  // For each lane: out[lane] += (sum over data nodes of base[lane*stride + index] * value),
  // the inner sum formed in node order starting from 0.
  void (*sparse_strided_dots)(const float* base, std::ptrdiff_t lane_stride, std::size_t lanes,
                              const Node* segment, float* out);
  // Dense analogue: out[lane] += (sum over c < length of base[lane*stride + c] * fiber[c]).
  void (*dense_strided_dots)(const float* base, std::ptrdiff_t lane_stride, std::size_t lanes,
                             const float* fiber, std::size_t length, float* out);
  void (*relu)(float* data, std::size_t n);
  void (*leaky_relu)(float* data, std::size_t n, float slope);
  // Channel-innermost data: x = scale[c] * (x - mean[c]) / denom[c] + shift[c].
  void (*batchnorm)(float* data, std::size_t fibers, std::size_t channels, const float* scale,
                    const float* shift, const float* mean, const float* denom);
};

const KernelTable& table(Level level);
inline const KernelTable& active() { return table(active_level()); }

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
}  // namespace detail

}  // namespace sparse_infer::simd
