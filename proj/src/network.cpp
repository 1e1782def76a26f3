#include "sparse_infer/network.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "sparse_infer/convert.hpp"
#include "sparse_infer/parallel.hpp"

namespace sparse_infer {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::sparse_filter: return "sparse_filter";
    case Variant::sparse_input: return "sparse_input";
    case Variant::dense_baseline: return "dense_baseline";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : {Variant::sparse_filter, Variant::sparse_input, Variant::dense_baseline}) {
    if (text == to_string(v)) return v;
  }
  throw ConfigError("unknown variant \"" + std::string(text) + "\"");
}

std::string layer_label(const LayerSpec& layer) {
  if (layer.kind == LayerKind::conv && layer.conv.fuse_pool) {
    const PoolWindow& p = *layer.conv.fuse_pool;
    return std::string("conv+") + (p.mode == PoolMode::max ? "maxpool" : "avgpool");
  }
  return to_string(layer.kind);
}

// ---- NetworkSpec ----------------------------------------------------------

std::vector<Dims3> NetworkSpec::validate() const {
  if (input.c <= 0 || input.h <= 0 || input.w <= 0) throw ShapeError("network input dims must be positive");
  std::vector<Dims3> dims;
  dims.reserve(layers.size());
  Dims3 cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "layer " + std::to_string(i) + " (" + layer_label(layers[i]) + "): ";
    try {
      cur = layers[i].output_dims(cur);
    } catch (const ShapeError& e) {
      throw ShapeError(where + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
    dims.push_back(cur);
  }
  return dims;
}

Dims3 NetworkSpec::output_dims() const {
  const std::vector<Dims3> d = validate();
  return d.empty() ? input : d.back();
}

Dims3 NetworkSpec::layer_input_dims(std::size_t i) const {
  if (i >= layers.size()) throw ConfigError("layer index out of range");
  return i == 0 ? input : validate()[i - 1];
}

std::size_t NetworkSpec::conv_count() const {
  std::size_t n = 0;
  for (const LayerSpec& l : layers) n += l.kind == LayerKind::conv;
  return n;
}

// ---- model text -----------------------------------------------------------

namespace {

struct ParsedLine {
  std::string keyword;
  std::map<std::string, std::string> args;
};

[[noreturn]] void line_error(std::size_t line, const std::string& msg) {
  throw FormatError("model line " + std::to_string(line) + ": " + msg);
}

ParsedLine tokenize(std::string_view text, std::size_t line) {
  std::istringstream in{std::string(text)};
  ParsedLine out;
  in >> out.keyword;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == tok.size()) line_error(line, "expected key=value, got \"" + tok + "\"");
    if (!out.args.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second) {
      line_error(line, "duplicate key \"" + tok.substr(0, eq) + "\"");
    }
  }
  return out;
}

class ArgReader {
 public:
  ArgReader(ParsedLine& p, std::size_t line) : p_(p), line_(line) {}

  Index integer(const std::string& key, std::optional<Index> fallback = {}) {
    const auto it = p_.args.find(key);
    if (it == p_.args.end()) {
      if (fallback) return *fallback;
      line_error(line_, p_.keyword + " needs " + key + "=");
    }
    Index v = 0;
    const std::string s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) line_error(line_, key + " is not an integer: \"" + s + "\"");
    p_.args.erase(it);
    return v;
  }

  float real(const std::string& key, float fallback) {
    const auto it = p_.args.find(key);
    if (it == p_.args.end()) return fallback;
    float v = 0;
    const std::string s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) line_error(line_, key + " is not a number: \"" + s + "\"");
    p_.args.erase(it);
    return v;
  }

  std::optional<std::string> text(const std::string& key) {
    const auto it = p_.args.find(key);
    if (it == p_.args.end()) return std::nullopt;
    std::string v = it->second;
    p_.args.erase(it);
    return v;
  }

  void finish() const {
    if (!p_.args.empty()) line_error(line_, "unknown key \"" + p_.args.begin()->first + "\" for " + p_.keyword);
  }

 private:
  ParsedLine& p_;
  std::size_t line_;
};

std::optional<PoolWindow> parse_fused_pool(const std::string& s, std::size_t line) {
  PoolMode mode;
  std::string_view rest(s);
  if (rest.starts_with("max")) {
    mode = PoolMode::max;
  } else if (rest.starts_with("avg")) {
    mode = PoolMode::avg;
  } else {
    line_error(line, "pool must be max<k> or avg<k>, got \"" + s + "\"");
  }
  rest.remove_prefix(3);
  Index k = 0;
  const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), k);
  if (ec != std::errc{} || ptr != rest.data() + rest.size() || k <= 0) {
    line_error(line, "bad pool window in \"" + s + "\"");
  }
  return PoolWindow{k, k, mode};
}

std::string format_float(float v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

NetworkSpec parse_model(std::string_view text) {
  NetworkSpec spec;
  bool have_input = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    ParsedLine p = tokenize(line, line_no);
    if (p.keyword.empty()) continue;
    ArgReader args(p, line_no);
    if (p.keyword == "input") {
      if (have_input) line_error(line_no, "duplicate input line");
      spec.input = {args.integer("c"), args.integer("h"), args.integer("w")};
      if (auto name = args.text("name")) spec.name = *name;
      if (auto variant = args.text("variant")) spec.variant = parse_variant(*variant);
      have_input = true;
    } else {
      if (!have_input) line_error(line_no, "the first layer line must be preceded by an input line");
      LayerSpec layer;
      if (p.keyword == "conv") {
        const Index out = args.integer("out");
        const Index k = args.integer("k");
        const Index s = args.integer("s", 1);
        const Index pad = args.integer("p", 0);
        std::optional<PoolWindow> pool;
        if (auto pv = args.text("pool")) pool = parse_fused_pool(*pv, line_no);
        layer = LayerSpec::make_conv(out, k, s, pad, pool);
      } else if (p.keyword == "maxpool" || p.keyword == "avgpool") {
        layer = LayerSpec::make_pool(p.keyword == "maxpool" ? PoolMode::max : PoolMode::avg, args.integer("k"));
      } else if (p.keyword == "relu") {
        layer = LayerSpec::make_relu();
      } else if (p.keyword == "leaky_relu") {
        layer = LayerSpec::make_leaky_relu(args.real("slope", 0.1f));
      } else if (p.keyword == "batchnorm") {
        layer = LayerSpec::make_batchnorm(args.real("eps", 1e-5f));
      } else if (p.keyword == "pad") {
        layer = LayerSpec::make_pad(args.integer("p"));
      } else {
        line_error(line_no, "unknown layer \"" + p.keyword + "\"");
      }
      spec.layers.push_back(layer);
    }
    args.finish();
  }
  if (!have_input) throw FormatError("model has no input line");
  return spec;
}

std::string format_model(const NetworkSpec& spec) {
  std::ostringstream out;
  out << "input c=" << spec.input.c << " h=" << spec.input.h << " w=" << spec.input.w << " name=" << spec.name
      << " variant=" << to_string(spec.variant) << '\n';
  for (const LayerSpec& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv:
        if (l.conv.kernel_h != l.conv.kernel_w) throw ConfigError("model text only expresses square kernels");
        out << "conv out=" << l.conv.out_channels << " k=" << l.conv.kernel_h << " s=" << l.conv.stride
            << " p=" << l.conv.padding;
        if (l.conv.fuse_pool) {
          const PoolWindow& p = *l.conv.fuse_pool;
          if (p.h != p.w) throw ConfigError("model text only expresses square pool windows");
          out << " pool=" << (p.mode == PoolMode::max ? "max" : "avg") << p.h;
        }
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        if (l.pool.h != l.pool.w) throw ConfigError("model text only expresses square pool windows");
        out << to_string(l.kind) << " k=" << l.pool.h;
        break;
      case LayerKind::relu: out << "relu"; break;
      case LayerKind::leaky_relu: out << "leaky_relu slope=" << format_float(l.slope); break;
      case LayerKind::batchnorm: out << "batchnorm eps=" << format_float(l.epsilon); break;
      case LayerKind::pad: out << "pad p=" << l.pad; break;
    }
    out << '\n';
  }
  return out.str();
}

NetworkSpec load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_model(text.str());
}

void save_model(const std::filesystem::path& path, const NetworkSpec& spec) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write model file " + path.string());
  out << format_model(spec);
  if (!out) throw Error("failed writing " + path.string());
}

// ---- weights --------------------------------------------------------------

NetworkWeights random_weights(const NetworkSpec& spec, std::uint64_t seed) {
  const std::vector<Dims3> dims = spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> filter_dist(-0.5f, 0.5f);
  std::uniform_real_distribution<float> unit(0.5f, 1.5f);
  auto nonzero = [&] {
    float v = 0.0f;
    while (v == 0.0f) v = filter_dist(rng);
    return v;
  };
  NetworkWeights w;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const Dims3 in = i == 0 ? spec.input : dims[i - 1];
    if (l.kind == LayerKind::conv) {
      ConvParams p;
      for (Index n = 0; n < l.conv.out_channels; ++n) {
        DenseTensor3 f({in.c, l.conv.kernel_h, l.conv.kernel_w});
        for (float& v : f.data()) v = nonzero();
        p.filters.push_back(std::move(f));
      }
      p.bias.assign(static_cast<std::size_t>(l.conv.out_channels), 0.0f);
      w.layers.emplace_back(std::move(p));
    } else if (l.kind == LayerKind::batchnorm) {
      BatchNormParams p;
      p.epsilon = l.epsilon;
      for (Index c = 0; c < in.c; ++c) {
        p.scale.push_back(unit(rng));
        p.shift.push_back(filter_dist(rng));
        p.mean.push_back(filter_dist(rng));
        p.var.push_back(unit(rng));
      }
      w.layers.emplace_back(std::move(p));
    }
  }
  return w;
}

void check_weights(const NetworkSpec& spec, const NetworkWeights& weights) {
  const std::vector<Dims3> dims = spec.validate();
  std::size_t k = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.kind != LayerKind::conv && l.kind != LayerKind::batchnorm) continue;
    const std::string where = "layer " + std::to_string(i) + " (" + layer_label(l) + "): ";
    if (k >= weights.layers.size()) throw ShapeError(where + "no parameters supplied");
    const Dims3 in = i == 0 ? spec.input : dims[i - 1];
    const LayerParams& params = weights.layers[k++];
    if (l.kind == LayerKind::conv) {
      const auto* p = std::get_if<ConvParams>(&params);
      if (!p) throw ShapeError(where + "expected conv parameters");
      const Dims3 expect{in.c, l.conv.kernel_h, l.conv.kernel_w};
      if (p->filters.size() != static_cast<std::size_t>(l.conv.out_channels) || p->bias.size() != p->filters.size()) {
        throw ShapeError(where + "expected " + std::to_string(l.conv.out_channels) + " filters and biases");
      }
      for (const DenseTensor3& f : p->filters) {
        if (f.dims() != expect) throw ShapeError(where + "filter extents do not match the layer");
      }
    } else {
      const auto* p = std::get_if<BatchNormParams>(&params);
      if (!p) throw ShapeError(where + "expected batch norm parameters");
      try {
        p->validate(in.c);
      } catch (const ShapeError& e) {
        throw ShapeError(where + e.what());
      }
    }
  }
  if (k != weights.layers.size()) {
    throw ShapeError("weights have " + std::to_string(weights.layers.size()) + " parameter layers, spec has " +
                     std::to_string(k));
  }
}

std::string to_string(WeightFileError::Kind kind) {
  switch (kind) {
    case WeightFileError::Kind::bad_magic: return "bad magic";
    case WeightFileError::Kind::version: return "version mismatch";
    case WeightFileError::Kind::dim_mismatch: return "dim mismatch";
    case WeightFileError::Kind::truncated: return "truncated payload";
  }
  return "unknown";
}

WeightFileError::WeightFileError(Kind kind, int layer, const std::string& detail)
    : FormatError("weight file " + (layer < 0 ? std::string("header") : "parameter layer " + std::to_string(layer)) +
                  ": " + to_string(kind) + ": " + detail),
      kind_(kind),
      layer_(layer) {}

void write_weights(std::ostream& out, const NetworkWeights& weights) {
  io::write_magic(out, "FSNW");
  io::write_le<std::uint32_t>(out, kWeightFileVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(weights.layers.size()));
  for (const LayerParams& lp : weights.layers) {
    if (const auto* p = std::get_if<ConvParams>(&lp)) {
      if (p->bias.size() != p->filters.size()) throw ShapeError("conv parameters need one bias per filter");
      const Dims3 d = p->filters.empty() ? Dims3{} : p->filters.front().dims();
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->filters.size()));
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.c));
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.h));
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.w));
      for (const DenseTensor3& f : p->filters) {
        if (f.dims() != d) throw ShapeError("filters in one layer must share extents");
        write_dense_tensor3(out, f);
      }
      for (float b : p->bias) io::write_le<float>(out, b);
    } else {
      const auto& bn = std::get<BatchNormParams>(lp);
      for (const auto* arr : {&bn.scale, &bn.shift, &bn.mean, &bn.var}) {
        if (arr->size() != bn.scale.size()) throw ShapeError("batch norm arrays differ in length");
        for (float v : *arr) io::write_le<float>(out, v);
      }
      io::write_le<float>(out, bn.epsilon);
    }
  }
}

NetworkWeights read_weights(std::istream& in, const NetworkSpec& spec) {
  using Kind = WeightFileError::Kind;
  const std::vector<Dims3> dims = spec.validate();
  std::uint32_t count = 0;
  try {
    io::expect_magic(in, "FSNW");
    const auto version = io::read_le<std::uint32_t>(in, "version");
    if (version != kWeightFileVersion) {
      throw WeightFileError(Kind::version, -1,
                            "file version " + std::to_string(version) + ", expected " + std::to_string(kWeightFileVersion));
    }
    count = io::read_le<std::uint32_t>(in, "layer count");
  } catch (const WeightFileError&) {
    throw;
  } catch (const TruncatedInput& e) {
    throw WeightFileError(Kind::truncated, -1, e.what());
  } catch (const FormatError& e) {
    throw WeightFileError(Kind::bad_magic, -1, e.what());
  }

  std::vector<std::size_t> param_layers;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerKind k = spec.layers[i].kind;
    if (k == LayerKind::conv || k == LayerKind::batchnorm) param_layers.push_back(i);
  }
  if (count != param_layers.size()) {
    throw WeightFileError(Kind::dim_mismatch, -1,
                          "file has " + std::to_string(count) + " parameter layers, spec has " +
                              std::to_string(param_layers.size()));
  }

  NetworkWeights weights;
  for (std::size_t k = 0; k < param_layers.size(); ++k) {
    const std::size_t i = param_layers[k];
    const LayerSpec& l = spec.layers[i];
    const Dims3 input = i == 0 ? spec.input : dims[i - 1];
    const int layer = static_cast<int>(k);
    try {
      if (l.kind == LayerKind::conv) {
        ConvParams p;
        const auto n = io::read_le<std::uint32_t>(in, "filter count");
        Dims3 d;
        d.c = static_cast<Index>(io::read_le<std::uint32_t>(in, "filter dims"));
        d.h = static_cast<Index>(io::read_le<std::uint32_t>(in, "filter dims"));
        d.w = static_cast<Index>(io::read_le<std::uint32_t>(in, "filter dims"));
        const Dims3 expect{input.c, l.conv.kernel_h, l.conv.kernel_w};
        if (n != static_cast<std::uint32_t>(l.conv.out_channels) || d != expect) {
          throw WeightFileError(Kind::dim_mismatch, layer,
                                "file has " + std::to_string(n) + " filters of " + std::to_string(d.c) + "x" +
                                    std::to_string(d.h) + "x" + std::to_string(d.w) + ", spec wants " +
                                    std::to_string(l.conv.out_channels) + " of " + std::to_string(expect.c) + "x" +
                                    std::to_string(expect.h) + "x" + std::to_string(expect.w));
        }
        p.filters.reserve(n);
        for (std::uint32_t f = 0; f < n; ++f) {
          DenseTensor3 t = read_dense_tensor3(in);
          if (t.dims() != expect) throw WeightFileError(Kind::dim_mismatch, layer, "filter " + std::to_string(f) + " extents differ from the layer header");
          p.filters.push_back(std::move(t));
        }
        p.bias.reserve(n);
        for (std::uint32_t f = 0; f < n; ++f) p.bias.push_back(io::read_le<float>(in, "bias"));
        weights.layers.emplace_back(std::move(p));
      } else {
        BatchNormParams p;
        for (auto* arr : {&p.scale, &p.shift, &p.mean, &p.var}) {
          arr->reserve(static_cast<std::size_t>(input.c));
          for (Index c = 0; c < input.c; ++c) arr->push_back(io::read_le<float>(in, "batch norm parameter"));
        }
        p.epsilon = io::read_le<float>(in, "batch norm epsilon");
        weights.layers.emplace_back(std::move(p));
      }
    } catch (const WeightFileError&) {
      throw;
    } catch (const TruncatedInput& e) {
      throw WeightFileError(Kind::truncated, layer, "(" + layer_label(l) + ") " + e.what());
    } catch (const FormatError& e) {
      throw WeightFileError(Kind::bad_magic, layer, "(" + layer_label(l) + ") " + e.what());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw WeightFileError(Kind::dim_mismatch, -1, "trailing bytes after the last parameter layer");
  }
  return weights;
}

void save_weights(const std::filesystem::path& path, const NetworkWeights& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write weight file " + path.string());
  write_weights(out, weights);
  if (!out) throw Error("failed writing " + path.string());
}

NetworkWeights load_weights(const std::filesystem::path& path, const NetworkSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open weight file " + path.string());
  return read_weights(in, spec);
}

// ---- forward --------------------------------------------------------------

PreparedNetwork::PreparedNetwork(NetworkSpec spec, const NetworkWeights& weights, double filter_density,
                                 std::uint64_t prune_seed)
    : spec_(std::move(spec)) {
  check_weights(spec_, weights);
  if (!(filter_density > 0.0 && filter_density <= 1.0)) throw ConfigError("filter density must lie in (0, 1]");
  std::size_t k = 0;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    Layer layer;
    layer.spec = spec_.layers[i];
    if (layer.spec.kind == LayerKind::conv) {
      const auto& p = std::get<ConvParams>(weights.layers[k++]);
      layer.dense_filters = filter_density < 1.0 ? prune_random(p.filters, filter_density, prune_seed + i) : p.filters;
      layer.bias = p.bias;
      if (spec_.variant == Variant::sparse_filter) {
        layer.sparse_filters = sparsify_filters(layer.dense_filters, AxisOrder3::chw);
      }
    } else if (layer.spec.kind == LayerKind::batchnorm) {
      layer.bn = std::get<BatchNormParams>(weights.layers[k++]);
    }
    layers_.push_back(std::move(layer));
  }
}

double PreparedNetwork::filter_density() const {
  std::size_t nonzero = 0;
  std::size_t total = 0;
  for (const Layer& l : layers_) {
    for (const DenseTensor3& f : l.dense_filters) {
      nonzero += count_nonzero(f.data());
      total += f.size();
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(nonzero) / static_cast<double>(total);
}

FeatureMap PreparedNetwork::run_layer(const Layer& layer, FeatureMap x, Strategy strategy, int workers) const {
  const LayerSpec& l = layer.spec;
  switch (l.kind) {
    case LayerKind::conv: {
      const ConvSpec& c = l.conv;
      if (spec_.variant == Variant::sparse_input) {
        const auto* s = std::get_if<SparseTensor3>(&x);
        SparseTensor3 converted;
        if (!s || s->order() != AxisOrder3::chw) {
          converted = sparsify_tensor3(to_dense(x), AxisOrder3::chw);
          s = &converted;
        }
        return conv_forward_sparse_input(s->view(), layer.dense_filters, layer.bias, c.stride, c.padding, c.fuse_pool,
                                         workers);
      }
      const DenseTensor3 in = std::holds_alternative<DenseTensor3>(x) ? std::move(std::get<DenseTensor3>(x)) : to_dense(x);
      DenseTensor3 out;
      if (spec_.variant == Variant::dense_baseline) {
        out = conv_forward_dense(in, layer.dense_filters, layer.bias, c.stride, c.padding, workers);
      } else if (strategy == Strategy::fused) {
        out = conv_forward_strategy_II(in, layer.sparse_filters, layer.bias, c.stride, c.padding);
      } else {
        out = conv_forward_strategy_I(in, layer.sparse_filters, layer.bias, c.stride, c.padding, workers);
      }
      if (c.fuse_pool) out = pool_standalone(out, *c.fuse_pool);
      return out;
    }
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return std::visit([&](const auto& t) -> FeatureMap {
        if constexpr (std::is_same_v<std::decay_t<decltype(t)>, SparseTensor3>) {
          return pool_standalone(t.view(), l.pool);
        } else {
          return pool_standalone(t, l.pool);
        }
      }, x);
    case LayerKind::relu:
    case LayerKind::leaky_relu: {
      const ActivationKind kind = l.kind == LayerKind::relu ? ActivationKind::relu : ActivationKind::leaky_relu;
      const float slope = l.kind == LayerKind::relu ? 0.0f : l.slope;
      if (auto* d = std::get_if<DenseTensor3>(&x)) return apply_activation(std::move(*d), kind, slope);
      return apply_activation(std::get<SparseTensor3>(x), kind, slope);
    }
    case LayerKind::batchnorm:
      if (auto* d = std::get_if<DenseTensor3>(&x)) return apply_batchnorm(std::move(*d), layer.bn);
      return apply_batchnorm(std::get<SparseTensor3>(x), layer.bn);
    case LayerKind::pad:
      return std::visit([&](const auto& t) -> FeatureMap { return pad_tensor(t, l.pad); }, x);
  }
  throw ConfigError("unknown layer kind");
}

FeatureMap PreparedNetwork::run_instance(const FeatureMap& input, Strategy strategy, int workers,
                                         std::vector<double>* densities) const {
  FeatureMap x = input;
  for (const Layer& layer : layers_) {
    x = run_layer(layer, std::move(x), strategy, workers);
    if (densities) densities->push_back(density(x));
  }
  return x;
}

ForwardResult PreparedNetwork::forward(std::span<const FeatureMap> batch, int workers, ForwardStrategy strategy,
                                       bool record_density) const {
  if (batch.empty()) throw ConfigError("forward needs a nonempty batch");
  if (workers < 1) throw ConfigError("worker count must be at least 1");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const FeatureMap& x = batch[i];
    if (dims_of(x) != spec_.input) throw ShapeError("batch instance " + std::to_string(i) + " does not match the network input");
    const auto* s = std::get_if<SparseTensor3>(&x);
    if (spec_.variant == Variant::sparse_input) {
      if (!s || s->order() != AxisOrder3::chw) {
        throw ConfigError("sparse_input networks take O_chw sparse instances (instance " + std::to_string(i) + ")");
      }
    } else if (s) {
      throw ConfigError(to_string(spec_.variant) + " networks take dense instances (instance " + std::to_string(i) + ")");
    }
  }

  const Strategy s =
      spec_.variant == Variant::sparse_filter ? strategy.resolve(batch.size()) : Strategy::per_filter;
  ForwardResult result;
  result.outputs.resize(batch.size());
  std::vector<std::vector<double>> densities(record_density ? batch.size() : 0);
  auto densities_of = [&](std::size_t i) { return record_density ? &densities[i] : nullptr; };

  const auto start = std::chrono::steady_clock::now();
  if (s == Strategy::fused) {
    parallel_for(batch.size(), workers,
                 [&](std::size_t i) { result.outputs[i] = run_instance(batch[i], s, 1, densities_of(i)); });
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i) result.outputs[i] = run_instance(batch[i], s, workers, densities_of(i));
  }
  const auto stop = std::chrono::steady_clock::now();

  RunRecord& r = result.record;
  r.variant = spec_.variant;
  r.density = filter_density();
  r.batch = batch.size();
  r.workers = workers;
  r.strategy = s;
  r.seconds = std::chrono::duration<double>(stop - start).count();
  if (record_density) {
    r.layer_density.assign(layers_.size(), 0.0);
    for (const auto& d : densities)
      for (std::size_t l = 0; l < d.size(); ++l) r.layer_density[l] += d[l];
    for (double& d : r.layer_density) d /= static_cast<double>(batch.size());
  }
  return result;
}

// ---- benchmark nets -------------------------------------------------------

std::string to_string(BenchmarkNet kind) {
  switch (kind) {
    case BenchmarkNet::vgg16_desk: return "vgg16_desk";
    case BenchmarkNet::yolo_desk: return "yolo_desk";
    case BenchmarkNet::vgg16_desk_noact: return "vgg16_desk_noact";
    case BenchmarkNet::yolo_desk_nobn: return "yolo_desk_nobn";
  }
  return "unknown";
}

BenchmarkNet parse_benchmark_net(std::string_view text) {
  for (BenchmarkNet k : {BenchmarkNet::vgg16_desk, BenchmarkNet::yolo_desk, BenchmarkNet::vgg16_desk_noact,
                         BenchmarkNet::yolo_desk_nobn}) {
    if (text == to_string(k)) return k;
  }
  throw ConfigError("unknown benchmark net \"" + std::string(text) + "\"");
}

NetworkSpec build_benchmark_net(BenchmarkNet kind, double scale, bool full_scale) {
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("scale must lie in (0, 1]");
  auto width = [scale](int w) { return static_cast<Index>(std::ceil(w * scale - 1e-9)); };
  const Index side = full_scale ? 224 : 32;
  NetworkSpec spec;
  spec.name = to_string(kind);
  spec.input = {3, side, side};
  const PoolWindow max2{2, 2, PoolMode::max};

  if (kind == BenchmarkNet::vgg16_desk || kind == BenchmarkNet::vgg16_desk_noact) {
    const bool act = kind == BenchmarkNet::vgg16_desk;
    const std::pair<int, int> blocks[] = {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
    for (const auto& [w, n] : blocks) {
      for (int i = 0; i < n; ++i) {
        // The block's max pool rides on its last conv; it commutes with the ReLU.
        const bool last = i + 1 == n;
        spec.layers.push_back(LayerSpec::make_conv(width(w), 3, 1, 1, last ? std::optional(max2) : std::nullopt));
        if (act) spec.layers.push_back(LayerSpec::make_relu());
      }
    }
  } else {
    const bool bn = kind == BenchmarkNet::yolo_desk;
    auto block = [&](int w, Index k, bool pool) {
      spec.layers.push_back(LayerSpec::make_conv(width(w), k, 1, k / 2));
      if (bn) {
        spec.layers.push_back(LayerSpec::make_batchnorm());
        spec.layers.push_back(LayerSpec::make_leaky_relu(0.1f));
      }
      if (pool) spec.layers.push_back(LayerSpec::make_pool(PoolMode::max, 2));
    };
    for (int w : {16, 32, 64, 128, 256}) block(w, 3, true);
    block(512, 3, false);
    block(1024, 3, false);
    spec.layers.push_back(LayerSpec::make_conv(width(125), 1, 1, 0));
  }
  spec.validate();
  return spec;
}

DenseTensor3 random_input(Dims3 dims, double density, std::uint64_t seed) {
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("input density must lie in (0, 1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  DenseTensor3 t(dims);
  for (float& v : t.data()) {
    do v = dist(rng);
    while (v == 0.0f);
  }
  return density < 1.0 ? prune_random(t, density, seed ^ 0x5bd1e995u) : t;
}

std::vector<DensityRow> density_evolution(const NetworkSpec& spec, const NetworkWeights& weights,
                                          std::span<const double> input_densities, std::uint64_t seed, int workers) {
  if (spec.variant != Variant::sparse_input) throw ConfigError("density evolution runs sparse_input networks");
  const PreparedNetwork net(spec, weights);
  std::vector<DensityRow> rows;
  for (double d : input_densities) {
    const std::vector<FeatureMap> batch{sparsify_tensor3(random_input(spec.input, d, seed), AxisOrder3::chw)};
    const ForwardResult r = net.forward(batch, workers, {}, true);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      rows.push_back({d, i, layer_label(spec.layers[i]), r.record.layer_density[i]});
    }
  }
  return rows;
}

void write_density_csv(std::ostream& out, std::span<const DensityRow> rows) {
  out << "input_density,layer_index,layer_kind,output_density\n";
  char buf[64];
  for (const DensityRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6g", r.input_density);
    out << buf << ',' << r.layer_index << ',' << r.layer_kind << ',';
    std::snprintf(buf, sizeof(buf), "%.9g", r.output_density);
    out << buf << '\n';
  }
}

}  // namespace sparse_infer
