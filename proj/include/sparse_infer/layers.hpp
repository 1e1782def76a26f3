#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sparse_infer/kernels.hpp"
#include "sparse_infer/sparse.hpp"
#include "sparse_infer/tensor.hpp"

namespace sparse_infer {

enum class PoolMode { max, avg };

// Non-overlapping window; stride equals the window.
struct PoolWindow {
  Index h = 1;
  Index w = 1;
  PoolMode mode = PoolMode::max;
  friend bool operator==(const PoolWindow&, const PoolWindow&) = default;
};

enum class ActivationKind { relu, leaky_relu };

// Inference-mode statistics, one entry per channel.
struct BatchNormParams {
  std::vector<float> scale;
  std::vector<float> shift;
  std::vector<float> mean;
  std::vector<float> var;
  float epsilon = 1e-5f;

  void validate(Index channels) const;
  friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

enum class LayerKind { conv, maxpool, avgpool, relu, leaky_relu, batchnorm, pad };

std::string to_string(LayerKind kind);

struct ConvSpec {
  Index out_channels = 0;
  Index kernel_h = 1;
  Index kernel_w = 1;
  Index stride = 1;
  Index padding = 0;
  // Pool applied to the conv output. On the sparse-input path it runs merged
  // with the convolution; elsewhere it runs as a standalone pool afterwards.
  std::optional<PoolWindow> fuse_pool;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  ConvSpec conv;
  PoolWindow pool;
  float slope = 0.1f;
  float epsilon = 1e-5f;
  Index pad = 0;

  static LayerSpec make_conv(Index out_channels, Index kernel, Index stride, Index padding,
                             std::optional<PoolWindow> fuse_pool = std::nullopt);
  static LayerSpec make_pool(PoolMode mode, Index window);
  static LayerSpec make_relu();
  static LayerSpec make_leaky_relu(float slope);
  static LayerSpec make_batchnorm(float epsilon = 1e-5f);
  static LayerSpec make_pad(Index pad);

  // Throws ShapeError when the layer cannot consume `input`.
  Dims3 output_dims(const Dims3& input) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// per_filter (strategy I): per-filter matrices, stacked and transposed. fused
// (strategy II): one loop nest writing the output directly. `automatic` picks
// per_filter for batches up to the threshold.
enum class Strategy { per_filter, fused, automatic };

struct ForwardStrategy {
  Strategy kind = Strategy::automatic;
  std::size_t threshold = 4;

  Strategy resolve(std::size_t batch_size) const;
};

std::string to_string(Strategy s);

using FeatureMap = std::variant<DenseTensor3, SparseTensor3>;

Dims3 dims_of(const FeatureMap& t);
double density(const FeatureMap& t);
DenseTensor3 to_dense(const FeatureMap& t);

// Sparse filters, dense input. Both strategies return identical bits.
DenseTensor3 conv_forward_strategy_I(const DenseTensor3& input, const SparseTensor4& filters,
                                     std::span<const float> bias, Index stride, Index padding, int workers = 1);
DenseTensor3 conv_forward_strategy_II(const DenseTensor3& input, const SparseTensor4& filters,
                                      std::span<const float> bias, Index stride, Index padding);

// Dense filters, dense input; the baseline path.
DenseTensor3 conv_forward_dense(const DenseTensor3& input, std::span<const DenseTensor3> filters,
                                std::span<const float> bias, Index stride, Index padding, int workers = 1);

// Sparse input, dense filters. Returns a sparse O_chw tensor, or a dense one
// when any bias is nonzero.
FeatureMap conv_forward_sparse_input(const SparseTensor3View& input, std::span<const DenseTensor3> filters,
                                     std::span<const float> bias, Index stride, Index padding,
                                     std::optional<PoolWindow> fused_pool, int workers = 1);

// Convolution with pooling folded in row by row; result is the pooled O_wh matrix.
SparseMatrix merged_conv_pool(const SparseTensor3View& input, const DenseTensor3& filter, const ConvGeometry& geom,
                              PoolWindow pool);

DenseTensor3 pool_standalone(const DenseTensor3& t, PoolWindow pool);
// Densifies, pools, and re-sparsifies into O_chw.
SparseTensor3 pool_standalone(const SparseTensor3View& t, PoolWindow pool);

DenseTensor3 apply_activation(DenseTensor3 t, ActivationKind kind, float slope = 0.0f);
// ReLU drops non-positive nodes; LeakyReLU rescales negative nodes in place.
SparseTensor3 apply_activation(const SparseTensor3& t, ActivationKind kind, float slope = 0.0f);

DenseTensor3 apply_batchnorm(DenseTensor3 t, const BatchNormParams& params);
// Batch norm maps zeros to nonzeros, so the sparse form is densified first.
DenseTensor3 apply_batchnorm(const SparseTensor3& t, const BatchNormParams& params);

DenseTensor3 pad_tensor(const DenseTensor3& t, Index pad);
SparseTensor3 pad_tensor(const SparseTensor3& t, Index pad);

}  // namespace sparse_infer
