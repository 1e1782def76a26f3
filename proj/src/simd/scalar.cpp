#include "sparse_infer/simd.hpp"

namespace sparse_infer::simd::detail {

namespace {

void sparse_strided_dots(const float* base, std::ptrdiff_t lane_stride, std::size_t lanes, const Node* segment,
                         float* out) {
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    const float* b = base + static_cast<std::ptrdiff_t>(lane) * lane_stride;
    float d = 0.0f;
    for (const Node* n = segment; n->index != kSentinel; ++n) d += b[n->index] * n->value;
    out[lane] += d;
  }
}

void dense_strided_dots(const float* base, std::ptrdiff_t lane_stride, std::size_t lanes, const float* fiber,
                        std::size_t length, float* out) {
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    const float* b = base + static_cast<std::ptrdiff_t>(lane) * lane_stride;
    float d = 0.0f;
    for (std::size_t c = 0; c < length; ++c) d += b[c] * fiber[c];
    out[lane] += d;
  }
}

void relu(float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) data[i] = data[i] > 0.0f ? data[i] : 0.0f;
}

void leaky_relu(float* data, std::size_t n, float slope) {
  for (std::size_t i = 0; i < n; ++i) data[i] = data[i] > 0.0f ? data[i] : slope * data[i];
}

void batchnorm(float* data, std::size_t fibers, std::size_t channels, const float* scale, const float* shift,
               const float* mean, const float* denom) {
  for (std::size_t f = 0; f < fibers; ++f) {
    float* x = data + f * channels;
    for (std::size_t c = 0; c < channels; ++c) x[c] = scale[c] * (x[c] - mean[c]) / denom[c] + shift[c];
  }
}

constexpr KernelTable kScalar{sparse_strided_dots, dense_strided_dots, relu, leaky_relu, batchnorm};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace sparse_infer::simd::detail
