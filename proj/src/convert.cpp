#include "sparse_infer/convert.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace sparse_infer {

namespace {

struct Coord {
  std::array<Index, 3> at{};  // indexed by Axis
  Index& operator[](Axis a) { return at[static_cast<std::size_t>(a)]; }
  Index c() const { return at[0]; }
  Index h() const { return at[1]; }
  Index w() const { return at[2]; }
};

void check_density(double target_density) {
  if (!(target_density > 0.0 && target_density <= 1.0)) {
    throw ConfigError("target density must lie in (0, 1], got " + std::to_string(target_density));
  }
}

// Zeroes all but a uniformly random subset of kept_count(d, n) positions in [0, n).
std::vector<bool> random_keep_mask(std::size_t n, double target_density, std::uint64_t seed) {
  check_density(target_density);
  const std::size_t keep = kept_count(target_density, n);
  std::vector<bool> mask(n, false);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
    mask[order[i]] = true;
  }
  return mask;
}

}  // namespace

SparseTensor3 sparsify_tensor3(const DenseTensor3& t, AxisOrder3 order) {
  const AxisTriple ax = axes_of(order);
  const Dims3& d = t.dims();
  const Index n_inner = extent(d, ax.inner);
  const Index n_mid = extent(d, ax.middle);
  const Index n_outer = extent(d, ax.outer);

  std::vector<Node> nodes;
  std::vector<std::size_t> matrix_offsets;
  std::vector<std::size_t> segment_offsets;
  matrix_offsets.reserve(static_cast<std::size_t>(n_outer));
  segment_offsets.reserve(static_cast<std::size_t>(n_mid) * static_cast<std::size_t>(n_outer));
  nodes.reserve(count_nonzero(t.data()) + segment_offsets.capacity());

  if (order == AxisOrder3::chw) {
    // Dense storage already walks w, h, c; each fiber is contiguous.
    const auto values = t.data();
    std::size_t p = 0;
    for (Index w = 0; w < d.w; ++w) {
      matrix_offsets.push_back(nodes.size());
      for (Index h = 0; h < d.h; ++h) {
        segment_offsets.push_back(nodes.size());
        for (Index c = 0; c < d.c; ++c, ++p) {
          if (values[p] != 0.0f) nodes.push_back({c, values[p]});
        }
        nodes.push_back({kSentinel, 0.0f});
      }
    }
  } else {
    Coord x;
    for (Index o = 0; o < n_outer; ++o) {
      matrix_offsets.push_back(nodes.size());
      x[ax.outer] = o;
      for (Index m = 0; m < n_mid; ++m) {
        segment_offsets.push_back(nodes.size());
        x[ax.middle] = m;
        for (Index i = 0; i < n_inner; ++i) {
          x[ax.inner] = i;
          const float v = t.at(x.c(), x.h(), x.w());
          if (v != 0.0f) nodes.push_back({i, v});
        }
        nodes.push_back({kSentinel, 0.0f});
      }
    }
  }
  return SparseTensor3::from_parts(order, d, std::move(nodes), std::move(matrix_offsets),
                                   std::move(segment_offsets));
}

DenseTensor3 densify_tensor3(const SparseTensor3View& t) {
  validate(t);
  const AxisTriple ax = axes_of(t.order);
  const Index n_mid = extent(t.dims, ax.middle);
  const Index n_outer = extent(t.dims, ax.outer);
  DenseTensor3 out(t.dims);
  Coord x;
  std::size_t s = 0;
  for (Index o = 0; o < n_outer; ++o) {
    x[ax.outer] = o;
    for (Index m = 0; m < n_mid; ++m, ++s) {
      x[ax.middle] = m;
      for (const Node* n = t.segment_begin(s); !n->is_sentinel(); ++n) {
        x[ax.inner] = n->index;
        out.at(x.c(), x.h(), x.w()) = n->value;
      }
    }
  }
  return out;
}

SparseMatrix sparsify_matrix(const DenseMatrix& m, AxisOrder2 order) {
  const bool by_rows = order == AxisOrder2::wh;
  const Index n_seg = by_rows ? m.rows() : m.cols();
  const Index n_inner = by_rows ? m.cols() : m.rows();
  std::vector<Node> nodes;
  std::vector<std::size_t> offsets;
  offsets.reserve(static_cast<std::size_t>(n_seg));
  for (Index s = 0; s < n_seg; ++s) {
    offsets.push_back(nodes.size());
    for (Index i = 0; i < n_inner; ++i) {
      const float v = by_rows ? m.at(s, i) : m.at(i, s);
      if (v != 0.0f) nodes.push_back({i, v});
    }
    nodes.push_back({kSentinel, 0.0f});
  }
  return SparseMatrix::from_parts(order, m.rows(), m.cols(), std::move(nodes), std::move(offsets));
}

DenseMatrix densify_matrix(const SparseMatrix& m) {
  m.validate();
  DenseMatrix out(m.rows(), m.cols());
  const bool by_rows = m.order() == AxisOrder2::wh;
  for (std::size_t s = 0; s < m.segment_count(); ++s) {
    for (const Node& n : m.segment(s)) {
      if (n.is_sentinel()) break;
      if (by_rows) {
        out.at(static_cast<Index>(s), n.index) = n.value;
      } else {
        out.at(n.index, static_cast<Index>(s)) = n.value;
      }
    }
  }
  return out;
}

SparseTensor4 sparsify_filters(std::span<const DenseTensor3> filters, AxisOrder3 order) {
  std::vector<SparseTensor3> parts;
  parts.reserve(filters.size());
  for (const DenseTensor3& f : filters) parts.push_back(sparsify_tensor3(f, order));
  return SparseTensor4::from_tensors(parts);
}

std::vector<DenseTensor3> densify_filters(const SparseTensor4& filters) {
  std::vector<DenseTensor3> out;
  out.reserve(static_cast<std::size_t>(filters.count()));
  for (Index n = 0; n < filters.count(); ++n) out.push_back(densify_tensor3(filters.tensor(n)));
  return out;
}

std::size_t count_nonzero(std::span<const float> values) {
  std::size_t n = 0;
  for (float v : values) n += v != 0.0f ? 1 : 0;
  return n;
}

double density(const DenseTensor3& t) {
  if (t.size() == 0) return 0.0;
  return static_cast<double>(count_nonzero(t.data())) / static_cast<double>(t.size());
}

double density(const SparseTensor3View& t) {
  const std::size_t total = t.dims.size();
  if (total == 0) return 0.0;
  return static_cast<double>(t.nnz()) / static_cast<double>(total);
}

double density(const SparseTensor4& t) {
  const std::size_t total = t.dims().size() * static_cast<std::size_t>(t.count());
  if (total == 0) return 0.0;
  return static_cast<double>(t.nnz()) / static_cast<double>(total);
}

std::size_t kept_count(double target_density, std::size_t total) {
  check_density(target_density);
  const auto kept = static_cast<std::size_t>(std::floor(target_density * static_cast<double>(total) + 0.5));
  return kept > total ? total : kept;
}

DenseTensor3 prune_random(const DenseTensor3& t, double target_density, std::uint64_t seed) {
  const std::vector<bool> keep = random_keep_mask(t.size(), target_density, seed);
  DenseTensor3 out = t;
  auto values = out.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!keep[i]) values[i] = 0.0f;
  }
  return out;
}

std::vector<DenseTensor3> prune_random(std::span<const DenseTensor3> filters, double target_density,
                                       std::uint64_t seed) {
  std::size_t total = 0;
  for (const DenseTensor3& f : filters) total += f.size();
  const std::vector<bool> keep = random_keep_mask(total, target_density, seed);
  std::vector<DenseTensor3> out(filters.begin(), filters.end());
  std::size_t p = 0;
  for (DenseTensor3& f : out) {
    for (float& v : f.data()) {
      if (!keep[p++]) v = 0.0f;
    }
  }
  return out;
}

SparseTensor4 prune_random(const SparseTensor4& filters, double target_density, std::uint64_t seed) {
  const std::vector<DenseTensor3> dense = densify_filters(filters);
  return sparsify_filters(prune_random(std::span<const DenseTensor3>(dense), target_density, seed),
                          filters.order());
}

}  // namespace sparse_infer
