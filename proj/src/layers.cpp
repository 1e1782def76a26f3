#include "sparse_infer/layers.hpp"

#include <cmath>
#include <limits>

#include "sparse_infer/convert.hpp"
#include "sparse_infer/parallel.hpp"
#include "sparse_infer/simd.hpp"

namespace sparse_infer {

namespace {

void check_pool(const PoolWindow& pool) {
  if (pool.h <= 0 || pool.w <= 0) {
    throw ConfigError("pool window must be positive, got " + std::to_string(pool.h) + "x" + std::to_string(pool.w));
  }
}

void check_divisible(Index h, Index w, const PoolWindow& pool, const char* what) {
  check_pool(pool);
  if (h % pool.h != 0 || w % pool.w != 0) {
    throw ShapeError(std::string(what) + ": extent " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by pool window " + std::to_string(pool.h) + "x" + std::to_string(pool.w));
  }
}

void check_bias(std::size_t filters, std::span<const float> bias) {
  if (bias.size() != filters) {
    throw ShapeError("bias has " + std::to_string(bias.size()) + " entries for " + std::to_string(filters) +
                     " filters");
  }
}

Dims3 filter_dims(std::span<const DenseTensor3> filters) {
  if (filters.empty()) throw ShapeError("convolution needs at least one filter");
  const Dims3 d = filters.front().dims();
  for (const DenseTensor3& f : filters) {
    if (f.dims() != d) throw ShapeError("filters in one layer must share extents");
  }
  return d;
}

// Rebuilds `t` with f applied to every stored value, dropping results equal to zero.
template <typename F>
SparseTensor3 transform_values(const SparseTensor3& t, F f) {
  const SparseTensor3View v = t.view();
  const AxisTriple ax = axes_of(v.order);
  const auto n_mid = static_cast<std::size_t>(extent(v.dims, ax.middle));
  const auto n_outer = static_cast<std::size_t>(extent(v.dims, ax.outer));
  std::vector<Node> nodes;
  nodes.reserve(v.nodes.size());
  std::vector<std::size_t> matrix_offsets;
  std::vector<std::size_t> segment_offsets;
  matrix_offsets.reserve(n_outer);
  segment_offsets.reserve(v.segment_count());
  std::size_t s = 0;
  for (std::size_t o = 0; o < n_outer; ++o) {
    matrix_offsets.push_back(nodes.size());
    for (std::size_t m = 0; m < n_mid; ++m, ++s) {
      segment_offsets.push_back(nodes.size());
      for (const Node* n = v.segment_begin(s); !n->is_sentinel(); ++n) {
        const float value = f(n->value);
        if (value != 0.0f) nodes.push_back({n->index, value});
      }
      nodes.push_back({kSentinel, 0.0f});
    }
  }
  return SparseTensor3::from_parts(v.order, v.dims, std::move(nodes), std::move(matrix_offsets),
                                   std::move(segment_offsets));
}

}  // namespace

void BatchNormParams::validate(Index channels) const {
  const auto c = static_cast<std::size_t>(channels);
  if (scale.size() != c || shift.size() != c || mean.size() != c || var.size() != c) {
    throw ShapeError("batch norm parameters do not match " + std::to_string(channels) + " channels");
  }
  for (std::size_t i = 0; i < c; ++i) {
    if (!(var[i] + epsilon > 0.0f)) {
      throw ConfigError("batch norm channel " + std::to_string(i) + " has non-positive variance + epsilon");
    }
  }
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::pad: return "pad";
  }
  return "unknown";
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::per_filter: return "1";
    case Strategy::fused: return "2";
    case Strategy::automatic: return "auto";
  }
  return "unknown";
}

LayerSpec LayerSpec::make_conv(Index out_channels, Index kernel, Index stride, Index padding,
                               std::optional<PoolWindow> fuse_pool) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.conv = {out_channels, kernel, kernel, stride, padding, fuse_pool};
  return l;
}

LayerSpec LayerSpec::make_pool(PoolMode mode, Index window) {
  LayerSpec l;
  l.kind = mode == PoolMode::max ? LayerKind::maxpool : LayerKind::avgpool;
  l.pool = {window, window, mode};
  return l;
}

LayerSpec LayerSpec::make_relu() { return LayerSpec{}; }

LayerSpec LayerSpec::make_leaky_relu(float slope) {
  LayerSpec l;
  l.kind = LayerKind::leaky_relu;
  l.slope = slope;
  return l;
}

LayerSpec LayerSpec::make_batchnorm(float epsilon) {
  LayerSpec l;
  l.kind = LayerKind::batchnorm;
  l.epsilon = epsilon;
  return l;
}

LayerSpec LayerSpec::make_pad(Index pad) {
  LayerSpec l;
  l.kind = LayerKind::pad;
  l.pad = pad;
  return l;
}

Dims3 LayerSpec::output_dims(const Dims3& in) const {
  switch (kind) {
    case LayerKind::conv: {
      if (conv.out_channels <= 0) throw ShapeError("conv layer needs a positive filter count");
      if (conv.kernel_h <= 0 || conv.kernel_w <= 0) throw ShapeError("conv kernel must be positive");
      const ConvGeometry g = ConvGeometry::make(in, {in.c, conv.kernel_h, conv.kernel_w}, conv.stride, conv.padding);
      Dims3 out{conv.out_channels, g.out_h(), g.out_w()};
      if (conv.fuse_pool) {
        check_divisible(out.h, out.w, *conv.fuse_pool, "fused pool");
        out.h /= conv.fuse_pool->h;
        out.w /= conv.fuse_pool->w;
      }
      return out;
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      check_divisible(in.h, in.w, pool, "pool");
      return {in.c, in.h / pool.h, in.w / pool.w};
    case LayerKind::leaky_relu:
      if (!(slope >= 0.0f)) throw ConfigError("leaky relu slope must be non-negative");
      return in;
    case LayerKind::relu:
    case LayerKind::batchnorm:
      return in;
    case LayerKind::pad:
      if (pad < 0) throw ConfigError("padding must be non-negative");
      return {in.c, in.h + 2 * pad, in.w + 2 * pad};
  }
  throw ShapeError("unknown layer kind");
}

Strategy ForwardStrategy::resolve(std::size_t batch_size) const {
  if (kind != Strategy::automatic) return kind;
  return batch_size <= threshold ? Strategy::per_filter : Strategy::fused;
}

Dims3 dims_of(const FeatureMap& t) {
  return std::visit([](const auto& x) { return x.dims(); }, t);
}

double density(const FeatureMap& t) {
  return std::visit([](const auto& x) { return sparse_infer::density(x); }, t);
}

DenseTensor3 to_dense(const FeatureMap& t) {
  if (const auto* d = std::get_if<DenseTensor3>(&t)) return *d;
  return densify_tensor3(std::get<SparseTensor3>(t));
}

DenseTensor3 conv_forward_strategy_I(const DenseTensor3& input, const SparseTensor4& filters,
                                     std::span<const float> bias, Index stride, Index padding, int workers) {
  check_bias(static_cast<std::size_t>(filters.count()), bias);
  if (filters.count() == 0) throw ShapeError("convolution needs at least one filter");
  const ConvGeometry geom = ConvGeometry::make(input.dims(), filters.dims(), stride, padding);
  const auto N = static_cast<std::size_t>(filters.count());
  const auto n_h = static_cast<std::size_t>(geom.out_h());
  const auto n_w = static_cast<std::size_t>(geom.out_w());

  std::vector<DenseMatrix> matrices(N);
  parallel_for(N, workers, [&](std::size_t i) {
    matrices[i] = conv_dense_input_sparse_filter(input, filters.tensor(static_cast<Index>(i)), geom);
  });

  // Stack the O_wh planes into an O_whc tensor.
  std::vector<float> stacked;
  stacked.reserve(N * n_h * n_w);
  for (const DenseMatrix& m : matrices) stacked.insert(stacked.end(), m.data().begin(), m.data().end());

  // O_whc -> O_chw, then per-channel bias.
  DenseTensor3 out({static_cast<Index>(N), geom.out_h(), geom.out_w()});
  float* o = out.data().data();
  for (std::size_t w = 0; w < n_w; ++w) {
    for (std::size_t h = 0; h < n_h; ++h) {
      for (std::size_t c = 0; c < N; ++c) *o++ = stacked[(c * n_h + h) * n_w + w];
    }
  }
  o = out.data().data();
  for (std::size_t p = 0; p < n_w * n_h; ++p) {
    for (std::size_t c = 0; c < N; ++c, ++o) *o = *o + bias[c];
  }
  return out;
}

DenseTensor3 conv_forward_strategy_II(const DenseTensor3& input, const SparseTensor4& filters,
                                      std::span<const float> bias, Index stride, Index padding) {
  check_bias(static_cast<std::size_t>(filters.count()), bias);
  if (filters.count() == 0) throw ShapeError("convolution needs at least one filter");
  const ConvGeometry geom = ConvGeometry::make(input.dims(), filters.dims(), stride, padding);
  for (Index f = 0; f < filters.count(); ++f) {
    if (filters.tensor(f).order != AxisOrder3::chw) throw FormatError("sparse filters must be stored in O_chw");
  }
  const simd::KernelTable& kt = simd::active();
  const Dims3& in = geom.input;
  const Index S = geom.stride;
  const Index P = geom.padding;
  const auto N = static_cast<std::size_t>(filters.count());
  const Index n_h = geom.out_h();
  const Index n_w = geom.out_w();
  const std::ptrdiff_t lane_stride = static_cast<std::ptrdiff_t>(S) * in.c;
  const float* data = input.data().data();

  std::vector<SparseTensor3View> views;
  views.reserve(N);
  for (std::size_t f = 0; f < N; ++f) views.push_back(filters.tensor(static_cast<Index>(f)));

  DenseTensor3 out({static_cast<Index>(N), n_h, n_w});
  float* o = out.data().data();
  std::vector<float> column(static_cast<std::size_t>(n_h));
  // Lanes run down one output column (consecutive h) for a fixed w and filter;
  // each element still accumulates its (l, k) dots with l outer.
  for (Index w = 0; w < n_w; ++w) {
    for (std::size_t f = 0; f < N; ++f) {
      const SparseTensor3View& filter = views[f];
      std::fill(column.begin(), column.end(), 0.0f);
      for (Index l = 0; l < geom.filter.w; ++l) {
        const Index w_in = l + w * S - P;
        if (w_in < 0 || w_in >= in.w) continue;
        for (Index k = 0; k < geom.filter.h; ++k) {
          const detail::OutputRange rows = detail::valid_outputs(k - P, S, in.h, n_h);
          if (rows.empty()) continue;
          const std::size_t seg = static_cast<std::size_t>(l) * geom.filter.h + k;
          if (filter.segment_range(seg).nnz() == 0) continue;
          const Index h_first = k - P + rows.begin * S;
          const float* base = data + (static_cast<std::size_t>(w_in) * in.h + h_first) * in.c;
          kt.sparse_strided_dots(base, lane_stride, static_cast<std::size_t>(rows.end - rows.begin),
                                 filter.segment_begin(seg), column.data() + rows.begin);
        }
      }
      for (Index h = 0; h < n_h; ++h) {
        o[(static_cast<std::size_t>(w) * n_h + h) * N + f] = column[static_cast<std::size_t>(h)] + bias[f];
      }
    }
  }
  return out;
}

DenseTensor3 conv_forward_dense(const DenseTensor3& input, std::span<const DenseTensor3> filters,
                                std::span<const float> bias, Index stride, Index padding, int workers) {
  check_bias(filters.size(), bias);
  const ConvGeometry geom = ConvGeometry::make(input.dims(), filter_dims(filters), stride, padding);
  const std::size_t N = filters.size();
  const auto n_h = static_cast<std::size_t>(geom.out_h());
  const auto n_w = static_cast<std::size_t>(geom.out_w());
  DenseTensor3 out({static_cast<Index>(N), geom.out_h(), geom.out_w()});
  float* o = out.data().data();
  parallel_for(N, workers, [&](std::size_t f) {
    const DenseMatrix m = conv_dense_baseline(input, filters[f], geom);
    for (std::size_t h = 0; h < n_h; ++h) {
      for (std::size_t w = 0; w < n_w; ++w) {
        o[(w * n_h + h) * N + f] = m.at(static_cast<Index>(h), static_cast<Index>(w)) + bias[f];
      }
    }
  });
  return out;
}

SparseMatrix merged_conv_pool(const SparseTensor3View& input, const DenseTensor3& filter, const ConvGeometry& geom,
                              PoolWindow pool) {
  geom.validate();
  check_pool(pool);
  if (input.order != AxisOrder3::chw) throw FormatError("sparse input must be stored in O_chw");
  if (input.dims != geom.input || filter.dims() != geom.filter) throw ShapeError("merged_conv_pool: dims mismatch");
  const Index n_h_conv = geom.out_h();
  const Index n_w_conv = geom.out_w();
  check_divisible(n_h_conv, n_w_conv, pool, "merged conv+pool");
  const Index n_h_pool = n_h_conv / pool.h;
  const Index n_w_pool = n_w_conv / pool.w;
  const bool is_max = pool.mode == PoolMode::max;
  const float initial = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
  const auto window = static_cast<float>(pool.h * pool.w);

  std::vector<float> pool_track(static_cast<std::size_t>(n_w_pool), initial);
  std::vector<Node> nodes;
  std::vector<std::size_t> offsets;
  offsets.reserve(static_cast<std::size_t>(n_h_pool));
  for (Index i = 0; i < n_h_conv; ++i) {
    for (Index j = 0; j < n_w_conv; ++j) {
      const float x = detail::sparse_input_conv_element(input, filter, geom, i, j);
      float& tracked = pool_track[static_cast<std::size_t>(j / pool.w)];
      if (is_max) {
        if (x > tracked) tracked = x;
      } else {
        tracked += x;
      }
    }
    if ((i + 1) % pool.h == 0) {
      offsets.push_back(nodes.size());
      for (Index c = 0; c < n_w_pool; ++c) {
        const float tracked = pool_track[static_cast<std::size_t>(c)];
        const float v = is_max ? tracked : tracked / window;
        if (v != 0.0f) nodes.push_back({c, v});
      }
      nodes.push_back({kSentinel, 0.0f});
      std::fill(pool_track.begin(), pool_track.end(), initial);
    }
  }
  return SparseMatrix::from_parts(AxisOrder2::wh, n_h_pool, n_w_pool, std::move(nodes), std::move(offsets));
}

FeatureMap conv_forward_sparse_input(const SparseTensor3View& input, std::span<const DenseTensor3> filters,
                                     std::span<const float> bias, Index stride, Index padding,
                                     std::optional<PoolWindow> fused_pool, int workers) {
  check_bias(filters.size(), bias);
  const ConvGeometry geom = ConvGeometry::make(input.dims, filter_dims(filters), stride, padding);
  if (fused_pool) check_divisible(geom.out_h(), geom.out_w(), *fused_pool, "fused pool");
  const std::size_t N = filters.size();

  std::vector<SparseMatrix> matrices(N);
  parallel_for(N, workers, [&](std::size_t i) {
    matrices[i] = fused_pool ? merged_conv_pool(input, filters[i], geom, *fused_pool)
                             : conv_sparse_input_dense_filter(input, filters[i], geom);
  });
  const SparseTensor3 stacked = SparseTensor3::stack_channels(matrices);
  SparseTensor3 out = transpose_tensor3(stacked.view());

  bool any_bias = false;
  for (float b : bias) any_bias = any_bias || b != 0.0f;
  if (!any_bias) return out;

  DenseTensor3 dense = densify_tensor3(out);
  float* o = dense.data().data();
  const std::size_t positions = static_cast<std::size_t>(dense.dims().h) * dense.dims().w;
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t c = 0; c < N; ++c, ++o) *o = *o + bias[c];
  }
  return dense;
}

DenseTensor3 pool_standalone(const DenseTensor3& t, PoolWindow pool) {
  const Dims3 d = t.dims();
  check_divisible(d.h, d.w, pool, "pool");
  const bool is_max = pool.mode == PoolMode::max;
  const float initial = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
  const auto window = static_cast<float>(pool.h * pool.w);
  DenseTensor3 out({d.c, d.h / pool.h, d.w / pool.w});
  for (Index ow = 0; ow < out.dims().w; ++ow) {
    for (Index oh = 0; oh < out.dims().h; ++oh) {
      for (Index c = 0; c < d.c; ++c) {
        float acc = initial;
        for (Index dh = 0; dh < pool.h; ++dh) {
          for (Index dw = 0; dw < pool.w; ++dw) {
            const float x = t.at(c, oh * pool.h + dh, ow * pool.w + dw);
            if (is_max) {
              if (x > acc) acc = x;
            } else {
              acc += x;
            }
          }
        }
        out.at(c, oh, ow) = is_max ? acc : acc / window;
      }
    }
  }
  return out;
}

SparseTensor3 pool_standalone(const SparseTensor3View& t, PoolWindow pool) {
  return sparsify_tensor3(pool_standalone(densify_tensor3(t), pool), AxisOrder3::chw);
}

DenseTensor3 apply_activation(DenseTensor3 t, ActivationKind kind, float slope) {
  const simd::KernelTable& kt = simd::active();
  if (kind == ActivationKind::relu) {
    kt.relu(t.data().data(), t.size());
  } else {
    if (!(slope >= 0.0f)) throw ConfigError("leaky relu slope must be non-negative");
    kt.leaky_relu(t.data().data(), t.size(), slope);
  }
  return t;
}

SparseTensor3 apply_activation(const SparseTensor3& t, ActivationKind kind, float slope) {
  if (kind == ActivationKind::relu) {
    return transform_values(t, [](float x) { return x > 0.0f ? x : 0.0f; });
  }
  if (!(slope >= 0.0f)) throw ConfigError("leaky relu slope must be non-negative");
  return transform_values(t, [slope](float x) { return x > 0.0f ? x : slope * x; });
}

DenseTensor3 apply_batchnorm(DenseTensor3 t, const BatchNormParams& params) {
  const Dims3 d = t.dims();
  params.validate(d.c);
  std::vector<float> denom(static_cast<std::size_t>(d.c));
  for (std::size_t c = 0; c < denom.size(); ++c) denom[c] = std::sqrt(params.var[c] + params.epsilon);
  simd::active().batchnorm(t.data().data(), static_cast<std::size_t>(d.h) * d.w, static_cast<std::size_t>(d.c),
                           params.scale.data(), params.shift.data(), params.mean.data(), denom.data());
  return t;
}

DenseTensor3 apply_batchnorm(const SparseTensor3& t, const BatchNormParams& params) {
  params.validate(t.dims().c);
  return apply_batchnorm(densify_tensor3(t), params);
}

DenseTensor3 pad_tensor(const DenseTensor3& t, Index pad) {
  if (pad < 0) throw ConfigError("padding must be non-negative");
  const Dims3 d = t.dims();
  DenseTensor3 out({d.c, d.h + 2 * pad, d.w + 2 * pad});
  for (Index w = 0; w < d.w; ++w) {
    for (Index h = 0; h < d.h; ++h) {
      const auto src = t.fiber(w, h);
      std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(out.offset(0, h + pad, w + pad)));
    }
  }
  return out;
}

SparseTensor3 pad_tensor(const SparseTensor3& t, Index pad) {
  if (pad < 0) throw ConfigError("padding must be non-negative");
  if (t.order() != AxisOrder3::chw) {
    return sparsify_tensor3(pad_tensor(densify_tensor3(t), pad), t.order());
  }
  const SparseTensor3View v = t.view();
  const Dims3 d = t.dims();
  const Dims3 out_dims{d.c, d.h + 2 * pad, d.w + 2 * pad};
  std::vector<Node> nodes;
  nodes.reserve(v.nnz() + static_cast<std::size_t>(out_dims.h) * out_dims.w);
  std::vector<std::size_t> matrix_offsets;
  std::vector<std::size_t> segment_offsets;
  for (Index w = 0; w < out_dims.w; ++w) {
    matrix_offsets.push_back(nodes.size());
    for (Index h = 0; h < out_dims.h; ++h) {
      segment_offsets.push_back(nodes.size());
      const Index w_in = w - pad;
      const Index h_in = h - pad;
      if (w_in >= 0 && w_in < d.w && h_in >= 0 && h_in < d.h) {
        for (const Node* n = v.fiber(w_in, h_in); !n->is_sentinel(); ++n) nodes.push_back(*n);
      }
      nodes.push_back({kSentinel, 0.0f});
    }
  }
  return SparseTensor3::from_parts(AxisOrder3::chw, out_dims, std::move(nodes), std::move(matrix_offsets),
                                   std::move(segment_offsets));
}

}  // namespace sparse_infer
