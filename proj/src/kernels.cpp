#include "sparse_infer/kernels.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "sparse_infer/simd.hpp"

namespace sparse_infer {

namespace {

std::string dims_str(const Dims3& d) {
  return "(" + std::to_string(d.c) + "," + std::to_string(d.h) + "," + std::to_string(d.w) + ")";
}

void check_input(const Dims3& actual, const Dims3& expected, const char* what) {
  if (actual != expected) {
    throw ShapeError(std::string(what) + " dims " + dims_str(actual) + " do not match geometry " + dims_str(expected));
  }
}

struct SegmentBuffer {
  std::vector<Node> nodes;
  std::vector<std::size_t> offsets;
};

// Counting pass: per output segment, the number of nodes it will hold including
// its sentinel; prefix sums give each segment's start, which then serves as the
// scatter cursor. Input offsets are relative to `nodes`.
SegmentBuffer transpose_segments(std::span<const Node> nodes, std::span<const std::size_t> offsets,
                                 std::size_t n_out) {
  std::vector<std::size_t> cursor(n_out + 1, 0);
  for (std::size_t s = 0; s < n_out; ++s) cursor[s + 1] = 1;
  for (const Node& n : nodes) {
    if (!n.is_sentinel()) ++cursor[static_cast<std::size_t>(n.index) + 1];
  }
  for (std::size_t s = 0; s < n_out; ++s) cursor[s + 1] += cursor[s];

  SegmentBuffer out;
  out.nodes.resize(cursor[n_out]);
  out.offsets.assign(cursor.begin(), cursor.end() - 1);
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    for (const Node* n = nodes.data() + offsets[i]; !n->is_sentinel(); ++n) {
      out.nodes[cursor[static_cast<std::size_t>(n->index)]++] = {static_cast<Index>(i), n->value};
    }
  }
  for (std::size_t s = 0; s < n_out; ++s) out.nodes[cursor[s]] = {kSentinel, 0.0f};
  return out;
}

}  // namespace

namespace detail {

OutputRange valid_outputs(Index offset, Index stride, Index in_extent, Index n_out) {
  const Index begin = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const Index last_room = in_extent - 1 - offset;
  if (last_room < 0) return {0, 0};
  const Index end = std::min(n_out, last_room / stride + 1);
  return {begin, end};
}

float sparse_input_conv_element(const SparseTensor3View& input, const DenseTensor3& filter,
                                const ConvGeometry& geom, Index row, Index col) {
  const Index S = geom.stride;
  const Index P = geom.padding;
  float x = 0.0f;
  for (Index l = 0; l < geom.filter.w; ++l) {
    const Index w_in = l + col * S - P;
    if (w_in < 0 || w_in >= geom.input.w) continue;
    for (Index k = 0; k < geom.filter.h; ++k) {
      const Index h_in = k + row * S - P;
      if (h_in < 0 || h_in >= geom.input.h) continue;
      x += dot_dense_sparse(filter.fiber(l, k).data(), input.fiber(w_in, h_in));
    }
  }
  return x;
}

}  // namespace detail

ConvGeometry ConvGeometry::make(Dims3 input, Dims3 filter, Index stride, Index padding) {
  ConvGeometry g{input, filter, stride, padding};
  g.validate();
  return g;
}

void ConvGeometry::validate() const {
  if (stride <= 0) throw ConfigError("stride must be positive, got " + std::to_string(stride));
  if (padding < 0) throw ConfigError("padding must be non-negative, got " + std::to_string(padding));
  if (input.c != filter.c) {
    throw ShapeError("channel mismatch: input has " + std::to_string(input.c) + ", filter has " +
                     std::to_string(filter.c));
  }
  if (filter.h <= 0 || filter.w <= 0 || input.h <= 0 || input.w <= 0 || input.c <= 0) {
    throw ShapeError("empty input or filter extent");
  }
  if (filter.h > input.h + 2 * padding || filter.w > input.w + 2 * padding) {
    throw ShapeError("filter " + dims_str(filter) + " larger than padded input " + dims_str(input));
  }
}

float dot_dense_sparse(const float* dense, const Node* segment) {
  float x = 0.0f;
  for (const Node* n = segment; n->index != kSentinel; ++n) x += dense[n->index] * n->value;
  return x;
}

float dot_dense_sparse(std::span<const float> dense, const SparseVector& sparse) {
  for (const Node& n : sparse.nodes()) {
    if (n.is_sentinel()) break;
    if (static_cast<std::size_t>(n.index) >= dense.size()) {
      throw FormatError("sparse node index " + std::to_string(n.index) + " beyond dense length " +
                        std::to_string(dense.size()));
    }
  }
  return dot_dense_sparse(dense.data(), sparse.nodes().data());
}

void conv_sparse_filter_row(const DenseTensor3& input, const SparseTensor3View& filter, const ConvGeometry& geom,
                            Index out_row, std::span<float> row, MultiplyCounter* counter) {
  const simd::KernelTable& kt = simd::active();
  const Dims3& in = geom.input;
  const Index S = geom.stride;
  const Index P = geom.padding;
  const Index n_w = geom.out_w();
  const std::ptrdiff_t lane_stride = static_cast<std::ptrdiff_t>(S) * in.h * in.c;
  const float* data = input.data().data();

  std::fill(row.begin(), row.end(), 0.0f);
  const Index h_base = out_row * S - P;
  for (Index l = 0; l < geom.filter.w; ++l) {
    const detail::OutputRange cols = detail::valid_outputs(l - P, S, in.w, n_w);
    if (cols.empty()) continue;
    const auto lanes = static_cast<std::size_t>(cols.end - cols.begin);
    const Index w_first = l - P + cols.begin * S;
    for (Index k = 0; k < geom.filter.h; ++k) {
      const Index h_in = h_base + k;
      if (h_in < 0 || h_in >= in.h) continue;
      const std::size_t seg = static_cast<std::size_t>(l) * geom.filter.h + k;
      const std::size_t nnz = filter.segment_range(seg).nnz();
      // An empty fiber contributes an exact zero.
      if (nnz == 0) continue;
      const float* base = data + (static_cast<std::size_t>(w_first) * in.h + h_in) * in.c;
      kt.sparse_strided_dots(base, lane_stride, lanes, filter.segment_begin(seg), row.data() + cols.begin);
      if (counter != nullptr) counter->multiplies += nnz * lanes;
    }
  }
}

DenseMatrix conv_dense_input_sparse_filter(const DenseTensor3& input, const SparseTensor3View& filter,
                                           const ConvGeometry& geom, MultiplyCounter* counter) {
  geom.validate();
  check_input(input.dims(), geom.input, "input");
  check_input(filter.dims, geom.filter, "filter");
  if (filter.order != AxisOrder3::chw) throw FormatError("sparse filter must be stored in O_chw");
  DenseMatrix m(geom.out_h(), geom.out_w());
  for (Index i = 0; i < m.rows(); ++i) conv_sparse_filter_row(input, filter, geom, i, m.row(i), counter);
  return m;
}

SparseMatrix conv_sparse_input_dense_filter(const SparseTensor3View& input, const DenseTensor3& filter,
                                            const ConvGeometry& geom) {
  geom.validate();
  check_input(input.dims, geom.input, "input");
  check_input(filter.dims(), geom.filter, "filter");
  if (input.order != AxisOrder3::chw) throw FormatError("sparse input must be stored in O_chw");
  const Index n_h = geom.out_h();
  const Index n_w = geom.out_w();

  std::vector<Node> nodes;
  std::vector<std::size_t> offsets;
  offsets.reserve(static_cast<std::size_t>(n_h));
  for (Index i = 0; i < n_h; ++i) {
    offsets.push_back(nodes.size());
    for (Index j = 0; j < n_w; ++j) {
      const float x = detail::sparse_input_conv_element(input, filter, geom, i, j);
      if (x != 0.0f) nodes.push_back({j, x});
    }
    nodes.push_back({kSentinel, 0.0f});
  }
  return SparseMatrix::from_parts(AxisOrder2::wh, n_h, n_w, std::move(nodes), std::move(offsets));
}

SparseMatrix transpose_matrix(const SparseMatrix& m) {
  const bool to_hw = m.order() == AxisOrder2::wh;
  const auto n_out = static_cast<std::size_t>(to_hw ? m.cols() : m.rows());
  SegmentBuffer t = transpose_segments(m.nodes(), m.segment_offsets(), n_out);
  return SparseMatrix::from_parts(to_hw ? AxisOrder2::hw : AxisOrder2::wh, m.rows(), m.cols(), std::move(t.nodes),
                                  std::move(t.offsets));
}

SparseTensor3 transpose_tensor3(const SparseTensor3View& t) {
  if (t.order != AxisOrder3::whc) {
    throw FormatError("transpose_tensor3 expects O_whc input, got " + std::string(to_string(t.order)));
  }
  const Dims3& d = t.dims;
  const auto C = static_cast<std::size_t>(d.c);
  const auto H = static_cast<std::size_t>(d.h);
  const auto W = static_cast<std::size_t>(d.w);

  // Per channel: O_wh -> O_hw, i.e. one segment per column holding row indices.
  std::vector<SegmentBuffer> columns;
  columns.reserve(C);
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t begin = t.matrix_offsets[c];
    const std::size_t end = c + 1 < C ? t.matrix_offsets[c + 1] : t.nodes.size();
    std::vector<std::size_t> rel(H);
    for (std::size_t h = 0; h < H; ++h) rel[h] = t.segment_offsets[c * H + h] - begin;
    columns.push_back(transpose_segments(t.nodes.subspan(begin, end - begin), rel, W));
  }

  std::vector<std::size_t> cursor(C * W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t w = 0; w < W; ++w) cursor[c * W + w] = columns[c].offsets[w];
  }

  std::vector<Node> nodes;
  nodes.reserve(t.nnz() + W * H);
  std::vector<std::size_t> matrix_offsets;
  std::vector<std::size_t> segment_offsets;
  matrix_offsets.reserve(W);
  segment_offsets.reserve(W * H);
  for (std::size_t w = 0; w < W; ++w) {
    matrix_offsets.push_back(nodes.size());
    for (std::size_t h = 0; h < H; ++h) {
      segment_offsets.push_back(nodes.size());
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t& pos = cursor[c * W + w];
        const Node& n = columns[c].nodes[pos];
        if (!n.is_sentinel() && static_cast<std::size_t>(n.index) == h) {
          nodes.push_back({static_cast<Index>(c), n.value});
          ++pos;
        }
      }
      nodes.push_back({kSentinel, 0.0f});
    }
  }
  return SparseTensor3::from_parts(AxisOrder3::chw, d, std::move(nodes), std::move(matrix_offsets),
                                   std::move(segment_offsets));
}

DenseMatrix dense_conv_reference(const DenseTensor3& input, const DenseTensor3& filter, const ConvGeometry& geom) {
  geom.validate();
  check_input(input.dims(), geom.input, "input");
  check_input(filter.dims(), geom.filter, "filter");
  const Index S = geom.stride;
  const Index P = geom.padding;
  DenseMatrix m(geom.out_h(), geom.out_w());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      float x = 0.0f;
      for (Index k = 0; k < geom.filter.h; ++k) {
        const Index h_in = k + i * S - P;
        if (h_in < 0 || h_in >= geom.input.h) continue;
        for (Index l = 0; l < geom.filter.w; ++l) {
          const Index w_in = l + j * S - P;
          if (w_in < 0 || w_in >= geom.input.w) continue;
          for (Index c = 0; c < geom.input.c; ++c) x += input.at(c, h_in, w_in) * filter.at(c, k, l);
        }
      }
      m.at(i, j) = x;
    }
  }
  return m;
}

DenseMatrix conv_dense_baseline(const DenseTensor3& input, const DenseTensor3& filter, const ConvGeometry& geom) {
  geom.validate();
  check_input(input.dims(), geom.input, "input");
  check_input(filter.dims(), geom.filter, "filter");
  const simd::KernelTable& kt = simd::active();
  const Dims3& in = geom.input;
  const Index S = geom.stride;
  const Index P = geom.padding;
  const std::ptrdiff_t lane_stride = static_cast<std::ptrdiff_t>(S) * in.h * in.c;
  const float* data = input.data().data();
  DenseMatrix m(geom.out_h(), geom.out_w());
  for (Index i = 0; i < m.rows(); ++i) {
    float* row = m.row(i).data();
    for (Index l = 0; l < geom.filter.w; ++l) {
      const detail::OutputRange cols = detail::valid_outputs(l - P, S, in.w, m.cols());
      if (cols.empty()) continue;
      const Index w_first = l - P + cols.begin * S;
      for (Index k = 0; k < geom.filter.h; ++k) {
        const Index h_in = i * S - P + k;
        if (h_in < 0 || h_in >= in.h) continue;
        const float* base = data + (static_cast<std::size_t>(w_first) * in.h + h_in) * in.c;
        kt.dense_strided_dots(base, lane_stride, static_cast<std::size_t>(cols.end - cols.begin),
                              filter.fiber(l, k).data(), static_cast<std::size_t>(in.c), row + cols.begin);
      }
    }
  }
  return m;
}

}  // namespace sparse_infer
