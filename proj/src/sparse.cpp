#include "sparse_infer/sparse.hpp"

#include <string>

namespace sparse_infer {

AxisTriple axes_of(AxisOrder3 order) {
  switch (order) {
    case AxisOrder3::whc: return {Axis::w, Axis::h, Axis::c};
    case AxisOrder3::wch: return {Axis::w, Axis::c, Axis::h};
    case AxisOrder3::hwc: return {Axis::h, Axis::w, Axis::c};
    case AxisOrder3::hcw: return {Axis::h, Axis::c, Axis::w};
    case AxisOrder3::chw: return {Axis::c, Axis::h, Axis::w};
    case AxisOrder3::cwh: return {Axis::c, Axis::w, Axis::h};
  }
  throw FormatError("unsupported axis order tag " + std::to_string(static_cast<int>(order)));
}

Index extent(const Dims3& dims, Axis axis) {
  switch (axis) {
    case Axis::c: return dims.c;
    case Axis::h: return dims.h;
    case Axis::w: return dims.w;
  }
  return 0;
}

std::string_view to_string(AxisOrder3 order) {
  switch (order) {
    case AxisOrder3::whc: return "O_whc";
    case AxisOrder3::wch: return "O_wch";
    case AxisOrder3::hwc: return "O_hwc";
    case AxisOrder3::hcw: return "O_hcw";
    case AxisOrder3::chw: return "O_chw";
    case AxisOrder3::cwh: return "O_cwh";
  }
  return "O_invalid";
}

std::string_view to_string(AxisOrder2 order) {
  return order == AxisOrder2::wh ? "O_wh" : "O_hw";
}

std::optional<AxisOrder3> order3_from_tag(std::uint8_t tag) {
  if (tag > static_cast<std::uint8_t>(AxisOrder3::cwh)) return std::nullopt;
  return static_cast<AxisOrder3>(tag);
}

namespace {

// Walks `count` sentinel-terminated segments starting at node `pos`, checking
// offsets, sortedness, index bounds and the no-explicit-zero rule. Returns the
// position one past the last sentinel.
std::size_t check_segments(std::span<const Node> nodes, std::span<const std::size_t> offsets,
                           std::size_t first_segment, std::size_t count, std::size_t pos, Index bound,
                           const char* what) {
  for (std::size_t s = first_segment; s < first_segment + count; ++s) {
    if (offsets[s] != pos) {
      throw FormatError(std::string(what) + ": segment " + std::to_string(s) + " offset " +
                        std::to_string(offsets[s]) + " does not match node position " + std::to_string(pos));
    }
    Index previous = kSentinel;
    while (true) {
      if (pos >= nodes.size()) {
        throw FormatError(std::string(what) + ": segment " + std::to_string(s) + " is missing its sentinel");
      }
      const Node& node = nodes[pos++];
      if (node.is_sentinel()) break;
      if (node.index < 0 || node.index >= bound) {
        throw FormatError(std::string(what) + ": node index " + std::to_string(node.index) +
                          " out of range [0, " + std::to_string(bound) + ")");
      }
      if (node.index <= previous) {
        throw FormatError(std::string(what) + ": segment " + std::to_string(s) + " is not strictly sorted");
      }
      if (node.value == 0.0f) {
        throw FormatError(std::string(what) + ": explicit zero stored at index " + std::to_string(node.index));
      }
      previous = node.index;
    }
  }
  return pos;
}

}  // namespace

SparseVector SparseVector::from_nodes(std::vector<Node> nodes, Index length) {
  if (length < 0) throw FormatError("sparse vector: negative length");
  const std::size_t offset = 0;
  const std::size_t end = check_segments(nodes, std::span(&offset, 1), 0, 1, 0, length, "sparse vector");
  if (end != nodes.size()) throw FormatError("sparse vector: nodes after sentinel");
  SparseVector v;
  v.nodes_ = std::move(nodes);
  v.length_ = length;
  return v;
}

SparseVector SparseVector::from_dense(std::span<const float> values) {
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0f) nodes.push_back({static_cast<Index>(i), values[i]});
  }
  nodes.push_back({kSentinel, 0.0f});
  SparseVector v;
  v.nodes_ = std::move(nodes);
  v.length_ = static_cast<Index>(values.size());
  return v;
}

std::vector<float> SparseVector::to_dense() const {
  std::vector<float> out(static_cast<std::size_t>(length_), 0.0f);
  for (const Node& n : nodes_) {
    if (n.is_sentinel()) break;
    out[static_cast<std::size_t>(n.index)] = n.value;
  }
  return out;
}

SparseMatrix SparseMatrix::from_parts(AxisOrder2 order, Index rows, Index cols, std::vector<Node> nodes,
                                      std::vector<std::size_t> segment_offsets) {
  SparseMatrix m;
  m.order_ = order;
  m.rows_ = rows;
  m.cols_ = cols;
  m.nodes_ = std::move(nodes);
  m.segment_offsets_ = std::move(segment_offsets);
  m.validate();
  return m;
}

SegmentRange SparseMatrix::segment_range(std::size_t s) const {
  const std::size_t end = s + 1 < segment_offsets_.size() ? segment_offsets_[s + 1] : nodes_.size();
  return {segment_offsets_[s], end};
}

std::span<const Node> SparseMatrix::segment(std::size_t s) const {
  const SegmentRange r = segment_range(s);
  return std::span<const Node>(nodes_).subspan(r.begin, r.end - r.begin);
}

void SparseMatrix::validate() const {
  if (order_ != AxisOrder2::wh && order_ != AxisOrder2::hw) throw FormatError("sparse matrix: bad order tag");
  if (rows_ < 0 || cols_ < 0) throw FormatError("sparse matrix: negative extent");
  const bool by_rows = order_ == AxisOrder2::wh;
  const auto segments = static_cast<std::size_t>(by_rows ? rows_ : cols_);
  const Index bound = by_rows ? cols_ : rows_;
  if (segment_offsets_.size() != segments) {
    throw FormatError("sparse matrix: expected " + std::to_string(segments) + " segments, offset table has " +
                      std::to_string(segment_offsets_.size()));
  }
  const std::size_t end = check_segments(nodes_, segment_offsets_, 0, segments, 0, bound, "sparse matrix");
  if (end != nodes_.size()) throw FormatError("sparse matrix: trailing nodes after last segment");
}

void validate(const SparseTensor3View& t) {
  const AxisTriple ax = axes_of(t.order);
  const Dims3& d = t.dims;
  if (d.c < 0 || d.h < 0 || d.w < 0) throw FormatError("sparse tensor: negative extent");
  const auto n_inner = extent(d, ax.inner);
  const auto n_mid = static_cast<std::size_t>(extent(d, ax.middle));
  const auto n_outer = static_cast<std::size_t>(extent(d, ax.outer));
  if (t.matrix_offsets.size() != n_outer) {
    throw FormatError("sparse tensor: expected " + std::to_string(n_outer) + " matrix offsets, got " +
                      std::to_string(t.matrix_offsets.size()));
  }
  if (t.segment_offsets.size() != n_mid * n_outer) {
    throw FormatError("sparse tensor: expected " + std::to_string(n_mid * n_outer) + " segment offsets, got " +
                      std::to_string(t.segment_offsets.size()));
  }
  std::size_t pos = 0;
  for (std::size_t o = 0; o < n_outer; ++o) {
    if (t.matrix_offsets[o] != pos) {
      throw FormatError("sparse tensor: matrix " + std::to_string(o) + " offset does not match node position");
    }
    pos = check_segments(t.nodes, t.segment_offsets, o * n_mid, n_mid, pos, n_inner, "sparse tensor");
  }
  if (pos != t.nodes.size()) throw FormatError("sparse tensor: trailing nodes after last segment");
}

SparseTensor3 SparseTensor3::from_parts(AxisOrder3 order, Dims3 dims, std::vector<Node> nodes,
                                        std::vector<std::size_t> matrix_offsets,
                                        std::vector<std::size_t> segment_offsets) {
  SparseTensor3 t;
  t.order_ = order;
  t.dims_ = dims;
  t.nodes_ = std::move(nodes);
  t.matrix_offsets_ = std::move(matrix_offsets);
  t.segment_offsets_ = std::move(segment_offsets);
  validate(t.view());
  return t;
}

SparseTensor3 SparseTensor3::stack_channels(std::span<const SparseMatrix> matrices) {
  if (matrices.empty()) throw ShapeError("stack_channels: no matrices");
  const Index rows = matrices.front().rows();
  const Index cols = matrices.front().cols();
  std::size_t total = 0;
  for (const SparseMatrix& m : matrices) {
    if (m.order() != AxisOrder2::wh) throw FormatError("stack_channels: matrices must be in O_wh");
    if (m.rows() != rows || m.cols() != cols) throw ShapeError("stack_channels: matrix extents differ");
    total += m.nodes().size();
  }
  SparseTensor3 t;
  t.order_ = AxisOrder3::whc;
  t.dims_ = {static_cast<Index>(matrices.size()), rows, cols};
  t.nodes_.reserve(total);
  t.matrix_offsets_.reserve(matrices.size());
  t.segment_offsets_.reserve(matrices.size() * static_cast<std::size_t>(rows));
  for (const SparseMatrix& m : matrices) {
    const std::size_t base = t.nodes_.size();
    t.matrix_offsets_.push_back(base);
    for (std::size_t off : m.segment_offsets()) t.segment_offsets_.push_back(base + off);
    t.nodes_.insert(t.nodes_.end(), m.nodes().begin(), m.nodes().end());
  }
  return t;
}

SparseTensor4 SparseTensor4::from_tensors(std::span<const SparseTensor3> tensors) {
  SparseTensor4 out;
  if (tensors.empty()) return out;
  out.order_ = tensors.front().order();
  out.dims_ = tensors.front().dims();
  std::size_t total = 0;
  for (const SparseTensor3& t : tensors) {
    if (t.order() != out.order_) throw FormatError("sparse 4-D tensor: constituent orders differ");
    if (t.dims() != out.dims_) throw ShapeError("sparse 4-D tensor: constituent extents differ");
    total += t.nodes().size();
  }
  out.nodes_.reserve(total);
  for (const SparseTensor3& t : tensors) {
    out.tensor_offsets_.push_back(out.nodes_.size());
    out.nodes_.insert(out.nodes_.end(), t.nodes().begin(), t.nodes().end());
    out.matrix_offsets_.insert(out.matrix_offsets_.end(), t.matrix_offsets().begin(), t.matrix_offsets().end());
    out.segment_offsets_.insert(out.segment_offsets_.end(), t.segment_offsets().begin(), t.segment_offsets().end());
  }
  return out;
}

SparseTensor3View SparseTensor4::tensor(Index n) const {
  if (n < 0 || n >= count()) throw ShapeError("sparse 4-D tensor: constituent index out of range");
  const auto i = static_cast<std::size_t>(n);
  const std::size_t begin = tensor_offsets_[i];
  const std::size_t end = i + 1 < tensor_offsets_.size() ? tensor_offsets_[i + 1] : nodes_.size();
  const std::size_t per_matrix = matrix_offsets_.size() / tensor_offsets_.size();
  const std::size_t per_segment = segment_offsets_.size() / tensor_offsets_.size();
  SparseTensor3View v;
  v.order = order_;
  v.dims = dims_;
  v.nodes = std::span<const Node>(nodes_).subspan(begin, end - begin);
  v.matrix_offsets = std::span<const std::size_t>(matrix_offsets_).subspan(i * per_matrix, per_matrix);
  v.segment_offsets = std::span<const std::size_t>(segment_offsets_).subspan(i * per_segment, per_segment);
  return v;
}

}  // namespace sparse_infer
