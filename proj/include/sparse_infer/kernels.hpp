#pragma once

#include <cstdint>
#include <span>

#include "sparse_infer/sparse.hpp"
#include "sparse_infer/tensor.hpp"

namespace sparse_infer {

// Input/filter extents plus stride and symmetric zero padding. Output extents
// use floor division, so trailing positions that do not fit a full window are dropped.
struct ConvGeometry {
  Dims3 input;
  Dims3 filter;
  Index stride = 1;
  Index padding = 0;

  static ConvGeometry make(Dims3 input, Dims3 filter, Index stride, Index padding);
  void validate() const;

  Index out_h() const { return (input.h + 2 * padding - filter.h) / stride + 1; }
  Index out_w() const { return (input.w + 2 * padding - filter.w) / stride + 1; }
};

// Counts the multiplications performed by the instrumented kernels.
struct MultiplyCounter {
  std::uint64_t multiplies = 0;
};

// Inner product of a dense fiber with a sentinel-terminated sparse segment, in node order.
float dot_dense_sparse(const float* dense, const Node* segment);
// Checked form: throws FormatError when a node indexes past the dense fiber.
float dot_dense_sparse(std::span<const float> dense, const SparseVector& sparse);

// Dense input, sparse O_chw filter. Result is n_h x n_w, row-major (O_wh).
// Each element sums one dot per filter position, width offset outer and height
// offset inner; padded positions are skipped.
DenseMatrix conv_dense_input_sparse_filter(const DenseTensor3& input, const SparseTensor3View& filter,
                                           const ConvGeometry& geom, MultiplyCounter* counter = nullptr);

// Computes one output row of conv_dense_input_sparse_filter into `row` (length n_w).
void conv_sparse_filter_row(const DenseTensor3& input, const SparseTensor3View& filter, const ConvGeometry& geom,
                            Index out_row, std::span<float> row, MultiplyCounter* counter = nullptr);

// Sparse O_chw input, dense filter. Exact zeros are not stored in the O_wh result.
SparseMatrix conv_sparse_input_dense_filter(const SparseTensor3View& input, const DenseTensor3& filter,
                                            const ConvGeometry& geom);

// O_wh <-> O_hw by counting, scatter and sentinel passes.
SparseMatrix transpose_matrix(const SparseMatrix& m);

// O_whc -> O_chw: each per-channel matrix is transposed to O_hw, then nodes are
// regathered per spatial position with their channel as index.
SparseTensor3 transpose_tensor3(const SparseTensor3View& t);

// Textbook cross-correlation over dense tensors; accumulates a single float per
// element in (filter row k, filter column l, channel c) order. Correctness oracle.
DenseMatrix dense_conv_reference(const DenseTensor3& input, const DenseTensor3& filter, const ConvGeometry& geom);

// Dense filter through the runtime-dispatched strided kernels. Same per-element
// grouping as the sparse-filter path: one dot per (l, k), l outer.
DenseMatrix conv_dense_baseline(const DenseTensor3& input, const DenseTensor3& filter, const ConvGeometry& geom);

namespace detail {

// Output positions [begin, end) along one axis whose input coordinate
// offset + pos*stride lies inside [0, in_extent).
struct OutputRange {
  Index begin;
  Index end;
  bool empty() const { return begin >= end; }
};
OutputRange valid_outputs(Index offset, Index stride, Index in_extent, Index n_out);

// One element of the sparse-input convolution: sum over (l, k) of
// dot(filter fiber, input fiber), l outer. Shared by the plain and pooled paths.
float sparse_input_conv_element(const SparseTensor3View& input, const DenseTensor3& filter,
                                const ConvGeometry& geom, Index row, Index col);

}  // namespace detail

}  // namespace sparse_infer
