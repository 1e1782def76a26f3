#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "sparse_infer/tensor.hpp"

namespace sparse_infer {

enum class Axis : std::uint8_t { c, h, w };

// Storage orders. The first letter names the axis stored in each node's index,
// the second the axis enumerated by segments, the last the outermost axis.
enum class AxisOrder2 : std::uint8_t { wh = 0, hw = 1 };
enum class AxisOrder3 : std::uint8_t { whc = 0, wch = 1, hwc = 2, hcw = 3, chw = 4, cwh = 5 };

struct AxisTriple {
  Axis inner;
  Axis middle;
  Axis outer;
};

AxisTriple axes_of(AxisOrder3 order);
Index extent(const Dims3& dims, Axis axis);
std::string_view to_string(AxisOrder3 order);
std::string_view to_string(AxisOrder2 order);
std::optional<AxisOrder3> order3_from_tag(std::uint8_t tag);

// Half-open range [begin, end) of nodes forming one segment; the node at end-1 is the sentinel.
struct SegmentRange {
  std::size_t begin;
  std::size_t end;
  std::size_t nnz() const { return end - begin - 1; }
};

// Nodes of one 1-D fiber followed by a sentinel.
class SparseVector {
 public:
  SparseVector() : nodes_{{kSentinel, 0.0f}} {}
  static SparseVector from_nodes(std::vector<Node> nodes, Index length);
  static SparseVector from_dense(std::span<const float> values);

  Index length() const { return length_; }
  std::span<const Node> nodes() const { return nodes_; }
  std::size_t nnz() const { return nodes_.size() - 1; }
  std::vector<float> to_dense() const;

 private:
  std::vector<Node> nodes_;
  Index length_ = 0;
};

// A list of sparse vectors in one contiguous buffer. O_wh keeps one segment per
// row with column indices in the nodes; O_hw one segment per column.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  static SparseMatrix from_parts(AxisOrder2 order, Index rows, Index cols, std::vector<Node> nodes,
                                 std::vector<std::size_t> segment_offsets);

  AxisOrder2 order() const { return order_; }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const std::size_t> segment_offsets() const { return segment_offsets_; }
  std::size_t segment_count() const { return segment_offsets_.size(); }
  SegmentRange segment_range(std::size_t s) const;
  std::span<const Node> segment(std::size_t s) const;
  std::size_t nnz() const { return nodes_.size() - segment_offsets_.size(); }

  void validate() const;

  friend bool operator==(const SparseMatrix&, const SparseMatrix&) = default;

 private:
  AxisOrder2 order_ = AxisOrder2::wh;
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<Node> nodes_;
  std::vector<std::size_t> segment_offsets_;
};

// Non-owning view of a sparse 3-D tensor. Offsets are relative to nodes.data().
// Matrices are indexed by the outer axis, segments by (outer, middle) with the
// outer coordinate major, so O_chw segment (w, h) is w*H + h.
struct SparseTensor3View {
  AxisOrder3 order = AxisOrder3::chw;
  Dims3 dims;
  std::span<const Node> nodes;
  std::span<const std::size_t> matrix_offsets;
  std::span<const std::size_t> segment_offsets;

  std::size_t segment_count() const { return segment_offsets.size(); }
  std::size_t nnz() const { return nodes.size() - segment_offsets.size(); }
  SegmentRange segment_range(std::size_t s) const {
    const std::size_t end = s + 1 < segment_offsets.size() ? segment_offsets[s + 1] : nodes.size();
    return {segment_offsets[s], end};
  }
  const Node* segment_begin(std::size_t s) const { return nodes.data() + segment_offsets[s]; }
  std::span<const Node> segment(std::size_t s) const {
    const SegmentRange r = segment_range(s);
    return nodes.subspan(r.begin, r.end - r.begin);
  }
  // O_chw only: channel fiber at spatial (w, h).
  const Node* fiber(Index w, Index h) const {
    return segment_begin(static_cast<std::size_t>(w) * dims.h + h);
  }
};

// Throws FormatError unless every structural invariant holds.
void validate(const SparseTensor3View& t);

class SparseTensor3 {
 public:
  SparseTensor3() = default;
  static SparseTensor3 from_parts(AxisOrder3 order, Dims3 dims, std::vector<Node> nodes,
                                  std::vector<std::size_t> matrix_offsets,
                                  std::vector<std::size_t> segment_offsets);
  // Stacks per-channel O_wh matrices (all rows x cols = H x W) into one O_whc tensor.
  static SparseTensor3 stack_channels(std::span<const SparseMatrix> matrices);

  SparseTensor3View view() const {
    return {order_, dims_, nodes_, matrix_offsets_, segment_offsets_};
  }
  AxisOrder3 order() const { return order_; }
  const Dims3& dims() const { return dims_; }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const std::size_t> matrix_offsets() const { return matrix_offsets_; }
  std::span<const std::size_t> segment_offsets() const { return segment_offsets_; }
  std::size_t nnz() const { return nodes_.size() - segment_offsets_.size(); }

  friend bool operator==(const SparseTensor3&, const SparseTensor3&) = default;

 private:
  AxisOrder3 order_ = AxisOrder3::chw;
  Dims3 dims_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> matrix_offsets_;
  std::vector<std::size_t> segment_offsets_;
};

// A batch of inputs or a filter set: N sparse 3-D tensors sharing one order and
// one node buffer. Nested offset tables are relative to each constituent's start.
class SparseTensor4 {
 public:
  SparseTensor4() = default;
  static SparseTensor4 from_tensors(std::span<const SparseTensor3> tensors);

  AxisOrder3 order() const { return order_; }
  Index count() const { return static_cast<Index>(tensor_offsets_.size()); }
  const Dims3& dims() const { return dims_; }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const std::size_t> tensor_offsets() const { return tensor_offsets_; }
  std::size_t nnz() const { return nodes_.size() - segment_offsets_.size(); }
  SparseTensor3View tensor(Index n) const;

 private:
  AxisOrder3 order_ = AxisOrder3::chw;
  Dims3 dims_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> tensor_offsets_;
  std::vector<std::size_t> matrix_offsets_;
  std::vector<std::size_t> segment_offsets_;
};

}  // namespace sparse_infer
