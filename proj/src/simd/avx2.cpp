#include "sparse_infer/simd.hpp"

#if defined(SPARSE_INFER_HAVE_AVX2)

#include <immintrin.h>

#include <climits>

namespace sparse_infer::simd::detail {

namespace {

constexpr std::size_t kLanes = 8;

// Gathers use 32-bit offsets; larger spans fall back to the scalar loop.
bool fits_gather(std::ptrdiff_t lane_stride, std::size_t extra) {
  return lane_stride >= 0 &&
         static_cast<long long>(lane_stride) * (kLanes - 1) + static_cast<long long>(extra) < INT_MAX;
}

__m256i lane_offsets(std::ptrdiff_t lane_stride) {
  return _mm256_mullo_epi32(_mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7),
                            _mm256_set1_epi32(static_cast<int>(lane_stride)));
}

void sparse_strided_dots(const float* base, std::ptrdiff_t lane_stride, std::size_t lanes, const Node* segment,
                         float* out) {
  std::size_t lane = 0;
  if (fits_gather(lane_stride, INT_MAX / 2)) {
    const __m256i offsets = lane_offsets(lane_stride);
    for (; lane + kLanes <= lanes; lane += kLanes) {
      const float* b = base + static_cast<std::ptrdiff_t>(lane) * lane_stride;
      __m256 acc = _mm256_setzero_ps();
      for (const Node* n = segment; n->index != kSentinel; ++n) {
        const __m256i idx = _mm256_add_epi32(offsets, _mm256_set1_epi32(n->index));
        const __m256 v = _mm256_i32gather_ps(b, idx, 4);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(v, _mm256_set1_ps(n->value)));
      }
      _mm256_storeu_ps(out + lane, _mm256_add_ps(_mm256_loadu_ps(out + lane), acc));
    }
  }
  scalar_table().sparse_strided_dots(base + static_cast<std::ptrdiff_t>(lane) * lane_stride, lane_stride,
                                     lanes - lane, segment, out + lane);
}

void dense_strided_dots(const float* base, std::ptrdiff_t lane_stride, std::size_t lanes, const float* fiber,
                        std::size_t length, float* out) {
  std::size_t lane = 0;
  if (fits_gather(lane_stride, length)) {
    const __m256i offsets = lane_offsets(lane_stride);
    for (; lane + kLanes <= lanes; lane += kLanes) {
      const float* b = base + static_cast<std::ptrdiff_t>(lane) * lane_stride;
      __m256 acc = _mm256_setzero_ps();
      for (std::size_t c = 0; c < length; ++c) {
        const __m256 v = _mm256_i32gather_ps(b + c, offsets, 4);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(v, _mm256_set1_ps(fiber[c])));
      }
      _mm256_storeu_ps(out + lane, _mm256_add_ps(_mm256_loadu_ps(out + lane), acc));
    }
  }
  scalar_table().dense_strided_dots(base + static_cast<std::ptrdiff_t>(lane) * lane_stride, lane_stride,
                                    lanes - lane, fiber, length, out + lane);
}

void relu(float* data, std::size_t n) {
  std::size_t i = 0;
  const __m256 zero = _mm256_setzero_ps();
  for (; i + kLanes <= n; i += kLanes) {
    // max_ps returns the second operand for NaN and for -0, matching x > 0 ? x : 0.
    _mm256_storeu_ps(data + i, _mm256_max_ps(_mm256_loadu_ps(data + i), zero));
  }
  scalar_table().relu(data + i, n - i);
}

void leaky_relu(float* data, std::size_t n, float slope) {
  std::size_t i = 0;
  const __m256 zero = _mm256_setzero_ps();
  const __m256 s = _mm256_set1_ps(slope);
  for (; i + kLanes <= n; i += kLanes) {
    const __m256 x = _mm256_loadu_ps(data + i);
    const __m256 positive = _mm256_cmp_ps(x, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(data + i, _mm256_blendv_ps(_mm256_mul_ps(s, x), x, positive));
  }
  scalar_table().leaky_relu(data + i, n - i, slope);
}

void batchnorm(float* data, std::size_t fibers, std::size_t channels, const float* scale, const float* shift,
               const float* mean, const float* denom) {
  for (std::size_t f = 0; f < fibers; ++f) {
    float* x = data + f * channels;
    std::size_t c = 0;
    for (; c + kLanes <= channels; c += kLanes) {
      const __m256 centered = _mm256_sub_ps(_mm256_loadu_ps(x + c), _mm256_loadu_ps(mean + c));
      const __m256 scaled = _mm256_div_ps(_mm256_mul_ps(_mm256_loadu_ps(scale + c), centered),
                                          _mm256_loadu_ps(denom + c));
      _mm256_storeu_ps(x + c, _mm256_add_ps(scaled, _mm256_loadu_ps(shift + c)));
    }
    scalar_table().batchnorm(x + c, 1, channels - c, scale + c, shift + c, mean + c, denom + c);
  }
}

constexpr KernelTable kAvx2{sparse_strided_dots, dense_strided_dots, relu, leaky_relu, batchnorm};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace sparse_infer::simd::detail

#else

namespace sparse_infer::simd::detail {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace sparse_infer::simd::detail

#endif
