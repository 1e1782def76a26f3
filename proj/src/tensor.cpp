#include "sparse_infer/tensor.hpp"

#include <string>

namespace sparse_infer {

DenseTensor3::DenseTensor3(Dims3 dims, float fill) : dims_(dims), data_(dims.size(), fill) {
  if (dims.c < 0 || dims.h < 0 || dims.w < 0) throw ShapeError("negative tensor extent");
}

DenseTensor3::DenseTensor3(Dims3 dims, std::vector<float> data) : dims_(dims), data_(std::move(data)) {
  if (dims.c < 0 || dims.h < 0 || dims.w < 0) throw ShapeError("negative tensor extent");
  if (data_.size() != dims_.size()) {
    throw ShapeError("dense tensor payload has " + std::to_string(data_.size()) + " values, dims need " +
                     std::to_string(dims_.size()));
  }
}

DenseMatrix::DenseMatrix(Index rows, Index cols, float fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill) {
  if (rows < 0 || cols < 0) throw ShapeError("negative matrix extent");
}

}  // namespace sparse_infer
