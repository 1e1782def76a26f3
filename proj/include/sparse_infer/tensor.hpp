#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sparse_infer/error.hpp"

namespace sparse_infer {

using Index = std::int32_t;
inline constexpr Index kSentinel = -1;

// One stored entry. Index is the coordinate along the innermost stored axis;
// kSentinel terminates a segment and its value is meaningless.
struct Node {
  Index index;
  float value;

  bool is_sentinel() const { return index == kSentinel; }
  friend bool operator==(const Node&, const Node&) = default;
};
static_assert(sizeof(Node) == 8);

// Extents of a 3-D tensor. Channel, height, width.
struct Dims3 {
  Index c = 0;
  Index h = 0;
  Index w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(c) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

// Dense 3-D tensor, channel innermost: element (c, h, w) lives at (w*H + h)*C + c.
class DenseTensor3 {
 public:
  DenseTensor3() = default;
  explicit DenseTensor3(Dims3 dims, float fill = 0.0f);
  DenseTensor3(Dims3 dims, std::vector<float> data);

  const Dims3& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::size_t offset(Index c, Index h, Index w) const {
    return (static_cast<std::size_t>(w) * dims_.h + h) * dims_.c + c;
  }
  float& at(Index c, Index h, Index w) { return data_[offset(c, h, w)]; }
  float at(Index c, Index h, Index w) const { return data_[offset(c, h, w)]; }

  // Channel fiber at spatial position (w, h).
  std::span<const float> fiber(Index w, Index h) const {
    return std::span<const float>(data_).subspan(offset(0, h, w), dims_.c);
  }

  friend bool operator==(const DenseTensor3&, const DenseTensor3&) = default;

 private:
  Dims3 dims_;
  std::vector<float> data_;
};

// Dense matrix stored row by row (order O_wh): element (row, col) at row*cols + col.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(Index rows, Index cols, float fill = 0.0f);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  float& at(Index r, Index c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  float at(Index r, Index c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  std::span<float> row(Index r) { return std::span<float>(data_).subspan(static_cast<std::size_t>(r) * cols_, cols_); }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<float> data_;
};

}  // namespace sparse_infer
