#include <cmath>
#include <limits>

#include "doctest.h"
#include "sparse_infer/convert.hpp"
#include "sparse_infer/kernels.hpp"
#include "sparse_infer/layers.hpp"
#include "sparse_infer/simd.hpp"
#include "test_support.hpp"

using namespace sparse_infer;
using sparse_infer::testing::all_close;
using sparse_infer::testing::bit_equal;
using sparse_infer::testing::random_dense;
using sparse_infer::testing::random_sparse_dense;

namespace {

struct ConvCase {
  DenseTensor3 input;
  std::vector<DenseTensor3> filters;
  std::vector<float> bias;
  Index stride;
  Index padding;
};

ConvCase random_case(std::mt19937_64& rng, double in_density, double filter_density, bool with_bias) {
  std::uniform_int_distribution<Index> c_dist(1, 6), hw_dist(3, 12), f_dist(1, 3), n_dist(1, 7), s_dist(1, 3),
      p_dist(0, 2);
  const Index C = c_dist(rng);
  const Index H = hw_dist(rng);
  const Index W = hw_dist(rng);
  const Index HF = std::min(f_dist(rng), H);
  const Index WF = std::min(f_dist(rng), W);
  ConvCase cc{random_sparse_dense({C, H, W}, in_density, rng), {}, {}, s_dist(rng), p_dist(rng)};
  const Index N = n_dist(rng);
  for (Index i = 0; i < N; ++i) cc.filters.push_back(random_sparse_dense({C, HF, WF}, filter_density, rng));
  std::uniform_real_distribution<float> b(-1.0f, 1.0f);
  for (Index i = 0; i < N; ++i) cc.bias.push_back(with_bias ? b(rng) : 0.0f);
  return cc;
}

// Per-filter reference planes plus bias, laid out as a chw tensor.
DenseTensor3 reference_forward(const ConvCase& cc) {
  const ConvGeometry g = ConvGeometry::make(cc.input.dims(), cc.filters.front().dims(), cc.stride, cc.padding);
  const auto N = static_cast<Index>(cc.filters.size());
  DenseTensor3 out({N, g.out_h(), g.out_w()});
  for (Index f = 0; f < N; ++f) {
    const DenseMatrix m = dense_conv_reference(cc.input, cc.filters[static_cast<std::size_t>(f)], g);
    for (Index h = 0; h < g.out_h(); ++h)
      for (Index w = 0; w < g.out_w(); ++w) out.at(f, h, w) = m.at(h, w) + cc.bias[static_cast<std::size_t>(f)];
  }
  return out;
}

}  // namespace

TEST_CASE("strategies I and II agree with each other, the dense path and the reference") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 150; ++trial) {
    const ConvCase cc = random_case(rng, 0.5, 0.3, trial % 2 == 0);
    const SparseTensor4 sf = sparsify_filters(cc.filters, AxisOrder3::chw);
    const DenseTensor3 one = conv_forward_strategy_I(cc.input, sf, cc.bias, cc.stride, cc.padding, 3);
    const DenseTensor3 two = conv_forward_strategy_II(cc.input, sf, cc.bias, cc.stride, cc.padding);
    const DenseTensor3 dense = conv_forward_dense(cc.input, cc.filters, cc.bias, cc.stride, cc.padding, 2);
    const FeatureMap sparse_in = conv_forward_sparse_input(sparsify_tensor3(cc.input, AxisOrder3::chw).view(),
                                                           cc.filters, cc.bias, cc.stride, cc.padding, {}, 2);
    CHECK(bit_equal(one.data(), two.data()));
    CHECK(bit_equal(one.data(), dense.data()));
    CHECK(bit_equal(one.data(), to_dense(sparse_in).data()));
    CHECK(all_close(one.data(), reference_forward(cc).data()));
  }
}

TEST_CASE("single all-ones 1x1 filter copies a one-channel input") {
  std::mt19937_64 rng(2);
  const DenseTensor3 in = random_dense({1, 5, 4}, rng);
  DenseTensor3 f({1, 1, 1}, 1.0f);
  const SparseTensor4 sf = sparsify_filters(std::span<const DenseTensor3>(&f, 1), AxisOrder3::chw);
  const std::vector<float> bias{0.0f};
  CHECK(conv_forward_strategy_I(in, sf, bias, 1, 0, 1) == in);
  CHECK(conv_forward_strategy_II(in, sf, bias, 1, 0) == in);
}

TEST_CASE("duplicated filters give identical channels; zero filters give the bias") {
  std::mt19937_64 rng(3);
  const DenseTensor3 in = random_dense({3, 6, 6}, rng);
  const DenseTensor3 f = random_sparse_dense({3, 3, 3}, 0.5, rng);
  const std::vector<DenseTensor3> filters{f, f, DenseTensor3({3, 3, 3})};
  const std::vector<float> bias{0.0f, 0.0f, 0.25f};
  const SparseTensor4 sf = sparsify_filters(filters, AxisOrder3::chw);
  for (const DenseTensor3& out :
       {conv_forward_strategy_I(in, sf, bias, 1, 1, 2), conv_forward_strategy_II(in, sf, bias, 1, 1)}) {
    for (Index h = 0; h < 6; ++h)
      for (Index w = 0; w < 6; ++w) {
        CHECK(out.at(0, h, w) == out.at(1, h, w));
        CHECK(out.at(2, h, w) == 0.25f);
      }
  }
}

TEST_CASE("strategy resolution follows the batch threshold") {
  ForwardStrategy s;
  CHECK(s.resolve(1) == Strategy::per_filter);
  CHECK(s.resolve(4) == Strategy::per_filter);
  CHECK(s.resolve(5) == Strategy::fused);
  s.kind = Strategy::fused;
  CHECK(s.resolve(1) == Strategy::fused);
}

TEST_CASE("pooling examples") {
  DenseTensor3 t({1, 2, 2});
  t.at(0, 0, 0) = 1;
  t.at(0, 0, 1) = 2;
  t.at(0, 1, 0) = 3;
  t.at(0, 1, 1) = 4;
  CHECK(pool_standalone(t, {2, 2, PoolMode::max}).at(0, 0, 0) == 4.0f);
  CHECK(pool_standalone(t, {2, 2, PoolMode::avg}).at(0, 0, 0) == 2.5f);
  DenseTensor3 neg({1, 2, 2}, -1.0f);
  CHECK(pool_standalone(neg, {2, 2, PoolMode::max}).at(0, 0, 0) == -1.0f);
  CHECK_THROWS_AS(pool_standalone(DenseTensor3({1, 3, 4}), {2, 2, PoolMode::max}), ShapeError);
  CHECK_THROWS_AS(pool_standalone(DenseTensor3({1, 2, 2}), {0, 2, PoolMode::max}), ConfigError);
}

TEST_CASE("merged conv+pool matches conv followed by a separate pool") {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; checked < 120; ++trial) {
    ConvCase cc = random_case(rng, 0.4, 0.6, false);
    const ConvGeometry g = ConvGeometry::make(cc.input.dims(), cc.filters.front().dims(), cc.stride, cc.padding);
    const PoolWindow pool{trial % 2 ? 2 : 1, 2, trial % 3 ? PoolMode::max : PoolMode::avg};
    if (g.out_h() % pool.h != 0 || g.out_w() % pool.w != 0) continue;
    ++checked;
    const SparseTensor3 in = sparsify_tensor3(cc.input, AxisOrder3::chw);
    const FeatureMap fused = conv_forward_sparse_input(in.view(), cc.filters, cc.bias, cc.stride, cc.padding, pool, 2);
    const FeatureMap plain = conv_forward_sparse_input(in.view(), cc.filters, cc.bias, cc.stride, cc.padding, {}, 2);
    const DenseTensor3 separate = pool_standalone(to_dense(plain), pool);
    CHECK(bit_equal(to_dense(fused).data(), separate.data()));
  }
}

TEST_CASE("fused pool with non-divisible output is rejected") {
  const SparseTensor3 in = sparsify_tensor3(DenseTensor3({1, 5, 5}, 1.0f), AxisOrder3::chw);
  const std::vector<DenseTensor3> f{DenseTensor3({1, 1, 1}, 1.0f)};
  const std::vector<float> bias{0.0f};
  CHECK_THROWS_AS(conv_forward_sparse_input(in.view(), f, bias, 1, 0, PoolWindow{2, 2, PoolMode::max}, 1), ShapeError);
}

TEST_CASE("sparse-input convolution stays sparse without bias and densifies with bias") {
  std::mt19937_64 rng(7);
  const DenseTensor3 in = random_sparse_dense({2, 6, 6}, 0.2, rng);
  const std::vector<DenseTensor3> f{random_dense({2, 3, 3}, rng)};
  const SparseTensor3 s = sparsify_tensor3(in, AxisOrder3::chw);
  const std::vector<float> zero{0.0f};
  const std::vector<float> half{0.5f};
  const FeatureMap a = conv_forward_sparse_input(s.view(), f, zero, 1, 1, {}, 1);
  const FeatureMap b = conv_forward_sparse_input(s.view(), f, half, 1, 1, {}, 1);
  REQUIRE(std::holds_alternative<SparseTensor3>(a));
  CHECK(std::get<SparseTensor3>(a).order() == AxisOrder3::chw);
  REQUIRE(std::holds_alternative<DenseTensor3>(b));
  const DenseTensor3 da = to_dense(a);
  const DenseTensor3& db = std::get<DenseTensor3>(b);
  for (std::size_t i = 0; i < da.size(); ++i) CHECK(db.data()[i] == da.data()[i] + 0.5f);
}

TEST_CASE("activations on sparse and dense tensors agree") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const DenseTensor3 d = random_sparse_dense({4, 5, 3}, 0.4, rng);
    const SparseTensor3 s = sparsify_tensor3(d, AxisOrder3::chw);
    const DenseTensor3 r = apply_activation(d, ActivationKind::relu);
    const DenseTensor3 l = apply_activation(d, ActivationKind::leaky_relu, 0.1f);
    CHECK(densify_tensor3(apply_activation(s, ActivationKind::relu)) == r);
    CHECK(densify_tensor3(apply_activation(s, ActivationKind::leaky_relu, 0.1f)) == l);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const float x = d.data()[i];
      CHECK(r.data()[i] == (x > 0 ? x : 0.0f));
      CHECK(l.data()[i] == (x > 0 ? x : 0.1f * x));
    }
    const SparseTensor3 relu_s = apply_activation(s, ActivationKind::relu);
    CHECK(relu_s.view().nnz() <= s.view().nnz());
  }
  CHECK_THROWS_AS(apply_activation(DenseTensor3({1, 1, 1}), ActivationKind::leaky_relu, -1.0f), ConfigError);
}

TEST_CASE("batch norm matches a per-element formula") {
  std::mt19937_64 rng(13);
  const DenseTensor3 d = random_sparse_dense({5, 4, 3}, 0.5, rng);
  BatchNormParams p;
  p.epsilon = 1e-3f;
  std::uniform_real_distribution<float> u(0.1f, 2.0f);
  for (int c = 0; c < 5; ++c) {
    p.scale.push_back(u(rng));
    p.shift.push_back(u(rng) - 1.0f);
    p.mean.push_back(u(rng) - 1.0f);
    p.var.push_back(u(rng));
  }
  const DenseTensor3 out = apply_batchnorm(d, p);
  for (Index c = 0; c < 5; ++c)
    for (Index h = 0; h < 4; ++h)
      for (Index w = 0; w < 3; ++w) {
        const auto i = static_cast<std::size_t>(c);
        const double expect =
            p.scale[i] * (d.at(c, h, w) - double(p.mean[i])) / std::sqrt(double(p.var[i]) + p.epsilon) + p.shift[i];
        CHECK(std::fabs(out.at(c, h, w) - expect) <= 1e-5 * std::max(1.0, std::fabs(expect)));
      }
  CHECK(apply_batchnorm(sparsify_tensor3(d, AxisOrder3::chw), p) == out);
  BatchNormParams bad = p;
  bad.var[2] = -1.0f;
  CHECK_THROWS_AS(apply_batchnorm(d, bad), ConfigError);
  bad = p;
  bad.scale.pop_back();
  CHECK_THROWS_AS(apply_batchnorm(d, bad), ShapeError);
}

TEST_CASE("padding adds zero borders") {
  std::mt19937_64 rng(17);
  const DenseTensor3 d = random_sparse_dense({2, 3, 4}, 0.6, rng);
  const DenseTensor3 p = pad_tensor(d, 2);
  CHECK(p.dims() == Dims3{2, 7, 8});
  for (Index c = 0; c < 2; ++c)
    for (Index h = 0; h < 7; ++h)
      for (Index w = 0; w < 8; ++w) {
        const bool inside = h >= 2 && h < 5 && w >= 2 && w < 6;
        CHECK(p.at(c, h, w) == (inside ? d.at(c, h - 2, w - 2) : 0.0f));
      }
  CHECK(densify_tensor3(pad_tensor(sparsify_tensor3(d, AxisOrder3::chw), 2)) == p);
  CHECK(densify_tensor3(pad_tensor(sparsify_tensor3(d, AxisOrder3::whc), 2)) == p);
}

TEST_CASE("output dims per layer kind") {
  const Dims3 in{3, 32, 32};
  CHECK(LayerSpec::make_conv(8, 3, 1, 1).output_dims(in) == Dims3{8, 32, 32});
  CHECK(LayerSpec::make_conv(8, 3, 2, 0).output_dims(in) == Dims3{8, 15, 15});
  CHECK(LayerSpec::make_conv(8, 3, 1, 1, PoolWindow{2, 2, PoolMode::max}).output_dims(in) == Dims3{8, 16, 16});
  CHECK(LayerSpec::make_pool(PoolMode::avg, 4).output_dims(in) == Dims3{3, 8, 8});
  CHECK(LayerSpec::make_pad(1).output_dims(in) == Dims3{3, 34, 34});
  CHECK(LayerSpec::make_relu().output_dims(in) == in);
  CHECK_THROWS_AS(LayerSpec::make_pool(PoolMode::max, 3).output_dims(in), ShapeError);
  CHECK_THROWS_AS(LayerSpec::make_conv(8, 40, 1, 0).output_dims(in), ShapeError);
  CHECK_THROWS_AS(LayerSpec::make_conv(8, 3, 0, 0).output_dims(in), ConfigError);
}

TEST_CASE("conv layer results do not depend on worker count") {
  std::mt19937_64 rng(19);
  const ConvCase cc = random_case(rng, 0.3, 0.3, true);
  const SparseTensor4 sf = sparsify_filters(cc.filters, AxisOrder3::chw);
  const DenseTensor3 base = conv_forward_strategy_I(cc.input, sf, cc.bias, cc.stride, cc.padding, 1);
  for (int workers : {2, 4, 8}) {
    CHECK(conv_forward_strategy_I(cc.input, sf, cc.bias, cc.stride, cc.padding, workers) == base);
    CHECK(conv_forward_dense(cc.input, cc.filters, cc.bias, cc.stride, cc.padding, workers) == base);
  }
}

TEST_CASE("conv layer errors") {
  std::mt19937_64 rng(23);
  const DenseTensor3 in = random_dense({2, 4, 4}, rng);
  const std::vector<DenseTensor3> f{random_dense({2, 3, 3}, rng)};
  const SparseTensor4 sf = sparsify_filters(f, AxisOrder3::chw);
  const std::vector<float> two_bias{0.0f, 0.0f};
  CHECK_THROWS_AS(conv_forward_strategy_I(in, sf, two_bias, 1, 0, 1), ShapeError);
  const std::vector<float> bias{0.0f};
  const std::vector<DenseTensor3> wrong_c{random_dense({3, 3, 3}, rng)};
  CHECK_THROWS_AS(conv_forward_dense(in, wrong_c, bias, 1, 0, 1), ShapeError);
  const SparseTensor4 whc = sparsify_filters(f, AxisOrder3::whc);
  CHECK_THROWS_AS(conv_forward_strategy_II(in, whc, bias, 1, 0), FormatError);
}
