#include "doctest.h"
#include "sparse_infer/convert.hpp"
#include "sparse_infer/kernels.hpp"
#include "test_support.hpp"

using namespace sparse_infer;
using sparse_infer::testing::all_close;
using sparse_infer::testing::bit_equal;
using sparse_infer::testing::random_dense;
using sparse_infer::testing::random_sparse_dense;

namespace {

// Independent oracle: materializes the zero-padded input and accumulates in double.
std::vector<double> padded_conv_oracle(const DenseTensor3& in, const DenseTensor3& f, Index S, Index P) {
  const Dims3 d = in.dims();
  const Index hp = d.h + 2 * P;
  const Index wp = d.w + 2 * P;
  std::vector<double> padded(static_cast<std::size_t>(d.c * hp * wp), 0.0);
  for (Index c = 0; c < d.c; ++c)
    for (Index h = 0; h < d.h; ++h)
      for (Index w = 0; w < d.w; ++w) padded[static_cast<std::size_t>((c * hp + h + P) * wp + w + P)] = in.at(c, h, w);
  const Index n_h = (hp - f.dims().h) / S + 1;
  const Index n_w = (wp - f.dims().w) / S + 1;
  std::vector<double> out(static_cast<std::size_t>(n_h * n_w), 0.0);
  for (Index i = 0; i < n_h; ++i)
    for (Index j = 0; j < n_w; ++j) {
      double x = 0.0;
      for (Index c = 0; c < d.c; ++c)
        for (Index a = 0; a < f.dims().h; ++a)
          for (Index b = 0; b < f.dims().w; ++b)
            x += padded[static_cast<std::size_t>((c * hp + i * S + a) * wp + j * S + b)] * f.at(c, a, b);
      out[static_cast<std::size_t>(i * n_w + j)] = x;
    }
  return out;
}

DenseTensor3 plane_as_tensor(const DenseMatrix& m) {
  DenseTensor3 t({1, m.rows(), m.cols()});
  for (Index h = 0; h < m.rows(); ++h)
    for (Index w = 0; w < m.cols(); ++w) t.at(0, h, w) = m.at(h, w);
  return t;
}

}  // namespace

TEST_CASE("geometry output extents and validation") {
  const ConvGeometry g = ConvGeometry::make({1, 5, 5}, {1, 3, 3}, 1, 0);
  CHECK(g.out_h() == 3);
  CHECK(g.out_w() == 3);
  CHECK(ConvGeometry::make({1, 6, 7}, {1, 3, 3}, 2, 1).out_h() == 3);  // floor((6+2-3)/2)+1
  CHECK(ConvGeometry::make({1, 6, 7}, {1, 3, 3}, 2, 1).out_w() == 4);
  CHECK_THROWS_AS(ConvGeometry::make({2, 5, 5}, {1, 3, 3}, 1, 0), ShapeError);
  CHECK_THROWS_AS(ConvGeometry::make({1, 5, 5}, {1, 3, 3}, 0, 0), ConfigError);
  CHECK_THROWS_AS(ConvGeometry::make({1, 2, 2}, {1, 5, 5}, 1, 0), ShapeError);
  CHECK_NOTHROW(ConvGeometry::make({1, 2, 2}, {1, 4, 4}, 1, 1));
}

TEST_CASE("valid output ranges") {
  using detail::valid_outputs;
  const auto r = valid_outputs(-1, 1, 5, 5);  // l - P = -1
  CHECK(r.begin == 1);
  CHECK(r.end == 5);
  const auto r2 = valid_outputs(1, 1, 5, 5);
  CHECK(r2.begin == 0);
  CHECK(r2.end == 4);
  const auto r3 = valid_outputs(-3, 2, 4, 3);  // positions -3, -1, 1
  CHECK(r3.begin == 2);
  CHECK(r3.end == 3);
  CHECK(valid_outputs(6, 1, 5, 3).empty());
}

TEST_CASE("dot of dense and sparse vectors") {
  const std::vector<float> d{1.0f, 2.0f, 3.0f, 4.0f};
  CHECK(dot_dense_sparse(d, SparseVector()) == 0.0f);
  const SparseVector s = SparseVector::from_nodes({{0, 2.0f}, {3, -1.0f}, {kSentinel, 0.0f}}, 4);
  // Oracle: full dense dot of the densified sparse vector.
  const std::vector<float> sd = s.to_dense();
  float oracle = 0.0f;
  for (std::size_t i = 0; i < d.size(); ++i) oracle += d[i] * sd[i];
  CHECK(oracle == -2.0f);
  CHECK(dot_dense_sparse(d, s) == oracle);

  const SparseVector arbitrary = SparseVector::from_nodes({{1, 7.0f}, {2, -3.0f}, {kSentinel, 0.0f}}, 4);
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<float> unit(4, 0.0f);
    unit[k] = 1.0f;
    CHECK(dot_dense_sparse(unit, arbitrary) == arbitrary.to_dense()[k]);
  }
  const SparseVector long_one = SparseVector::from_nodes({{5, 1.0f}, {kSentinel, 0.0f}}, 6);
  CHECK_THROWS_AS(dot_dense_sparse(d, long_one), FormatError);
}

TEST_CASE("dot is stable under canonicalization") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const DenseTensor3 dv = random_dense({16, 1, 1}, rng);
    const DenseTensor3 sv = random_sparse_dense({16, 1, 1}, 0.3, rng);
    const SparseVector s = SparseVector::from_dense(sv.data());
    const SparseVector canon = SparseVector::from_dense(s.to_dense());
    CHECK(dot_dense_sparse(dv.data(), s) == dot_dense_sparse(dv.data(), canon));
  }
}

TEST_CASE("identity convolution reproduces the input plane") {
  std::mt19937_64 rng(1);
  const DenseTensor3 in = random_dense({1, 4, 6}, rng);
  const DenseTensor3 unit({1, 1, 1}, 1.0f);
  const ConvGeometry g = ConvGeometry::make(in.dims(), unit.dims(), 1, 0);
  const DenseMatrix m = conv_dense_input_sparse_filter(in, sparsify_tensor3(unit, AxisOrder3::chw).view(), g);
  CHECK(bit_equal(plane_as_tensor(m).data(), in.data()));
  CHECK(plane_as_tensor(dense_conv_reference(in, unit, g)) == in);

  const SparseMatrix sm = conv_sparse_input_dense_filter(sparsify_tensor3(in, AxisOrder3::chw).view(), unit, g);
  CHECK(sm.nnz() == in.size());
  CHECK(plane_as_tensor(densify_matrix(sm)) == in);
}

TEST_CASE("output shape follows the row/column formula") {
  std::mt19937_64 rng(2);
  const DenseTensor3 in = random_dense({1, 5, 5}, rng);
  const DenseTensor3 f = random_dense({1, 3, 3}, rng);
  const ConvGeometry g = ConvGeometry::make(in.dims(), f.dims(), 1, 0);
  const DenseMatrix m = conv_dense_input_sparse_filter(in, sparsify_tensor3(f, AxisOrder3::chw).view(), g);
  CHECK(m.rows() == 3);
  CHECK(m.cols() == 3);
}

TEST_CASE("constant window sums") {
  const DenseTensor3 in({1, 3, 3}, 1.0f);
  const DenseTensor3 f({1, 2, 2}, 1.0f);
  const ConvGeometry g = ConvGeometry::make(in.dims(), f.dims(), 1, 0);
  const DenseMatrix m = dense_conv_reference(in, f, g);
  CHECK(m.rows() == 2);
  for (float v : m.data()) CHECK(v == 4.0f);
}

TEST_CASE("zero sparse input propagates to an empty output") {
  const SparseTensor3 in = sparsify_tensor3(DenseTensor3({3, 6, 6}), AxisOrder3::chw);
  std::mt19937_64 rng(3);
  const DenseTensor3 f = random_dense({3, 3, 3}, rng);
  const SparseMatrix m = conv_sparse_input_dense_filter(in.view(), f, ConvGeometry::make(in.dims(), f.dims(), 1, 1));
  CHECK(m.nnz() == 0);
  CHECK(m.segment_count() == 6);
}

TEST_CASE("kernel argument errors") {
  const DenseTensor3 in({2, 4, 4}, 1.0f);
  const DenseTensor3 f({2, 3, 3}, 1.0f);
  const ConvGeometry g = ConvGeometry::make(in.dims(), f.dims(), 1, 0);
  const SparseTensor3 whc = sparsify_tensor3(f, AxisOrder3::whc);
  CHECK_THROWS_AS(conv_dense_input_sparse_filter(in, whc.view(), g), FormatError);
  const DenseTensor3 wrong({3, 4, 4}, 1.0f);
  CHECK_THROWS_AS(conv_dense_input_sparse_filter(wrong, sparsify_tensor3(f, AxisOrder3::chw).view(), g), ShapeError);
  CHECK_THROWS_AS(transpose_tensor3(sparsify_tensor3(in, AxisOrder3::chw).view()), FormatError);
  ConvGeometry bad = g;
  bad.stride = 0;
  CHECK_THROWS_AS(dense_conv_reference(in, f, bad), ConfigError);
}

TEST_CASE("dense reference agrees with the padded double-precision oracle") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Index c = 1 + static_cast<Index>(rng() % 6);
    const Index k = 1 + 2 * static_cast<Index>(rng() % 3);
    const Index S = 1 + static_cast<Index>(rng() % 2);
    const Index P = static_cast<Index>(rng() % 2);
    const DenseTensor3 in = random_dense({c, 9, 11}, rng);
    const DenseTensor3 f = random_dense({c, k, k}, rng);
    const DenseMatrix m = dense_conv_reference(in, f, ConvGeometry::make(in.dims(), f.dims(), S, P));
    const auto oracle = padded_conv_oracle(in, f, S, P);
    REQUIRE(oracle.size() == m.data().size());
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(std::fabs(m.data()[i] - oracle[i]) < 1e-4);
  }
}

TEST_CASE("sparse kernels match the dense reference on random geometries") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const Index S = 1 + trial % 2;
    const Index P = (trial / 2) % 2;
    const double dens = trial % 3 == 0 ? 1.0 : 0.05;
    const DenseTensor3 in = random_dense({8, 16, 16}, rng);
    const DenseTensor3 f = prune_random(random_dense({8, 3, 3}, rng), dens, static_cast<std::uint64_t>(trial));
    const ConvGeometry g = ConvGeometry::make(in.dims(), f.dims(), S, P);
    const DenseMatrix ref = dense_conv_reference(in, f, g);
    const DenseMatrix a = conv_dense_input_sparse_filter(in, sparsify_tensor3(f, AxisOrder3::chw).view(), g);
    CHECK(all_close(a.data(), ref.data()));

    const DenseTensor3 sparse_in = prune_random(in, 0.05, static_cast<std::uint64_t>(trial));
    const DenseMatrix ref2 = dense_conv_reference(sparse_in, f, g);
    const SparseMatrix b = conv_sparse_input_dense_filter(sparsify_tensor3(sparse_in, AxisOrder3::chw).view(), f, g);
    CHECK(all_close(densify_matrix(b).data(), ref2.data()));
    // Both sparse kernels and the dense baseline share one grouping, so they agree exactly.
    CHECK(bit_equal(conv_dense_baseline(in, f, g).data(), a.data()));
    CHECK(bit_equal(conv_dense_baseline(sparse_in, f, g).data(), densify_matrix(b).data()));
  }
}

TEST_CASE("multiply count is filter nnz times output size") {
  std::mt19937_64 rng(6);
  const DenseTensor3 in = random_dense({4, 10, 10}, rng);
  const DenseTensor3 f = prune_random(random_dense({4, 3, 3}, rng), 0.3, 1);
  const SparseTensor3 sf = sparsify_tensor3(f, AxisOrder3::chw);
  const ConvGeometry g = ConvGeometry::make(in.dims(), f.dims(), 1, 0);
  MultiplyCounter counter;
  conv_dense_input_sparse_filter(in, sf.view(), g, &counter);
  CHECK(counter.multiplies == sf.nnz() * 8 * 8);

  // With padding, border outputs skip the out-of-range filter taps: enumerate them.
  const ConvGeometry gp = ConvGeometry::make(in.dims(), f.dims(), 2, 1);
  MultiplyCounter padded;
  conv_dense_input_sparse_filter(in, sf.view(), gp, &padded);
  std::uint64_t expected = 0;
  for (Index i = 0; i < gp.out_h(); ++i)
    for (Index j = 0; j < gp.out_w(); ++j)
      for (Index l = 0; l < 3; ++l)
        for (Index k = 0; k < 3; ++k) {
          const Index w = l + 2 * j - 1;
          const Index h = k + 2 * i - 1;
          if (w < 0 || w >= 10 || h < 0 || h >= 10) continue;
          for (Index c = 0; c < 4; ++c) expected += f.at(c, k, l) != 0.0f ? 1 : 0;
        }
  CHECK(padded.multiplies == expected);
}

TEST_CASE("matrix transpose") {
  const SparseMatrix zero = sparsify_matrix(DenseMatrix(3, 4), AxisOrder2::wh);
  const SparseMatrix zt = transpose_matrix(zero);
  CHECK(zt.order() == AxisOrder2::hw);
  CHECK(zt.segment_count() == 4);
  CHECK(zt.nnz() == 0);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const DenseMatrix m = sparse_infer::testing::random_sparse_matrix(32, 32, 0.1, rng);
    const SparseMatrix s = sparsify_matrix(m, AxisOrder2::wh);
    const SparseMatrix t = transpose_matrix(s);
    CHECK(transpose_matrix(t) == s);
    // Dense transpose oracle: O_hw storage of m has the transposed matrix's rows as its segments.
    DenseMatrix mt(32, 32);
    for (Index r = 0; r < 32; ++r)
      for (Index c = 0; c < 32; ++c) mt.at(c, r) = m.at(r, c);
    const SparseMatrix as_rows = SparseMatrix::from_parts(AxisOrder2::wh, 32, 32,
                                                          std::vector<Node>(t.nodes().begin(), t.nodes().end()),
                                                          std::vector<std::size_t>(t.segment_offsets().begin(),
                                                                                   t.segment_offsets().end()));
    CHECK(densify_matrix(as_rows) == mt);
    CHECK(densify_matrix(t) == m);
  }
}

TEST_CASE("rectangular matrix transpose") {
  std::mt19937_64 rng(8);
  const DenseMatrix m = sparse_infer::testing::random_sparse_matrix(5, 9, 0.4, rng);
  const SparseMatrix s = sparsify_matrix(m, AxisOrder2::wh);
  const SparseMatrix t = transpose_matrix(s);
  CHECK(t == sparsify_matrix(m, AxisOrder2::hw));
  CHECK(transpose_matrix(t) == s);
}

TEST_CASE("tensor transpose O_whc to O_chw") {
  const SparseTensor3 zero = transpose_tensor3(sparsify_tensor3(DenseTensor3({3, 4, 5}), AxisOrder3::whc).view());
  CHECK(zero.order() == AxisOrder3::chw);
  CHECK(zero.segment_offsets().size() == 20);
  CHECK(zero.nnz() == 0);

  DenseTensor3 one({3, 4, 5});
  one.at(2, 1, 0) = 9.0f;
  const SparseTensor3 t = transpose_tensor3(sparsify_tensor3(one, AxisOrder3::whc).view());
  CHECK(t.nnz() == 1);
  CHECK(*t.view().fiber(0, 1) == Node{2, 9.0f});

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const DenseTensor3 d = random_sparse_dense({8, 16, 16}, 0.2, rng);
    const SparseTensor3 whc = sparsify_tensor3(d, AxisOrder3::whc);
    const SparseTensor3 chw = transpose_tensor3(whc.view());
    CHECK(chw.nnz() == whc.nnz());
    CHECK(densify_tensor3(chw) == d);
    CHECK(chw == sparsify_tensor3(d, AxisOrder3::chw));
  }
}

TEST_CASE("stacking per-channel matrices") {
  std::mt19937_64 rng(10);
  std::vector<SparseMatrix> ms;
  std::vector<DenseMatrix> dense;
  for (int c = 0; c < 3; ++c) {
    dense.push_back(sparse_infer::testing::random_sparse_matrix(4, 6, 0.5, rng));
    ms.push_back(sparsify_matrix(dense.back(), AxisOrder2::wh));
  }
  const SparseTensor3 t = SparseTensor3::stack_channels(ms);
  CHECK(t.order() == AxisOrder3::whc);
  CHECK_NOTHROW(validate(t.view()));
  const DenseTensor3 d = densify_tensor3(t);
  for (Index c = 0; c < 3; ++c)
    for (Index h = 0; h < 4; ++h)
      for (Index w = 0; w < 6; ++w) CHECK(d.at(c, h, w) == dense[static_cast<std::size_t>(c)].at(h, w));
}
