#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sparse_infer/layers.hpp"
#include "sparse_infer/serialize.hpp"

namespace sparse_infer {

enum class Variant { sparse_filter, sparse_input, dense_baseline };

std::string to_string(Variant v);
// Accepts the to_string spellings; anything else is a ConfigError.
Variant parse_variant(std::string_view text);

struct NetworkSpec {
  std::string name = "net";
  Dims3 input;
  std::vector<LayerSpec> layers;
  Variant variant = Variant::sparse_filter;

  // Output dims of every layer in order. Throws ShapeError/ConfigError naming
  // the first layer whose input does not fit.
  std::vector<Dims3> validate() const;
  Dims3 output_dims() const;
  // Input dims seen by layer i.
  Dims3 layer_input_dims(std::size_t i) const;
  std::size_t conv_count() const;
};

// Line-oriented model text:
//   input c=3 h=32 w=32 [name=vgg]
//   conv out=64 k=3 s=1 p=1 [pool=max2]
//   maxpool k=2 | avgpool k=2 | relu | leaky_relu slope=0.1 | batchnorm [eps=1e-5] | pad p=1
// '#' starts a comment. Errors are FormatError/ConfigError with the line number.
NetworkSpec parse_model(std::string_view text);
std::string format_model(const NetworkSpec& spec);
NetworkSpec load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const NetworkSpec& spec);

struct ConvParams {
  std::vector<DenseTensor3> filters;
  std::vector<float> bias;
  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

using LayerParams = std::variant<ConvParams, BatchNormParams>;

// One entry per conv or batchnorm layer, in network order.
struct NetworkWeights {
  std::vector<LayerParams> layers;
  friend bool operator==(const NetworkWeights&, const NetworkWeights&) = default;
};

// Filters uniform on [-0.5, 0.5] (never exactly zero), zero biases. Batch norm:
// scale and var uniform on [0.5, 1.5], shift and mean uniform on [-0.5, 0.5].
NetworkWeights random_weights(const NetworkSpec& spec, std::uint64_t seed);
// Throws ShapeError if the weights do not fit the spec.
void check_weights(const NetworkSpec& spec, const NetworkWeights& weights);

class WeightFileError : public FormatError {
 public:
  enum class Kind { bad_magic, version, dim_mismatch, truncated };
  // layer is the parameter-layer index, or -1 for the file header.
  WeightFileError(Kind kind, int layer, const std::string& detail);
  Kind kind() const { return kind_; }
  int layer() const { return layer_; }

 private:
  Kind kind_;
  int layer_;
};

std::string to_string(WeightFileError::Kind kind);

inline constexpr std::uint32_t kWeightFileVersion = 1;

// "FSNW", u32 version, u32 parameter-layer count, then per conv layer: u32 N,
// u32 C/H/W, N "FDT3" filters, N f32 biases; per batchnorm layer: scale, shift,
// mean, var (C f32 each) and f32 epsilon. Batch norm C comes from the spec.
void write_weights(std::ostream& out, const NetworkWeights& weights);
NetworkWeights read_weights(std::istream& in, const NetworkSpec& spec);
void save_weights(const std::filesystem::path& path, const NetworkWeights& weights);
NetworkWeights load_weights(const std::filesystem::path& path, const NetworkSpec& spec);

struct RunRecord {
  Variant variant = Variant::sparse_filter;
  double density = 1.0;
  std::size_t batch = 0;
  int workers = 1;
  Strategy strategy = Strategy::per_filter;
  double seconds = 0.0;
  // Output density of every layer, averaged over the batch. Empty unless requested.
  std::vector<double> layer_density;
};

struct ForwardResult {
  std::vector<FeatureMap> outputs;
  RunRecord record;
};

// A spec plus weights converted for its variant. Filters are pruned at random to
// `filter_density` (one population per layer) before conversion.
class PreparedNetwork {
 public:
  PreparedNetwork(NetworkSpec spec, const NetworkWeights& weights, double filter_density = 1.0,
                  std::uint64_t prune_seed = 0);

  // sparse_filter and dense_baseline take dense instances; sparse_input takes O_chw
  // sparse instances. Strategy II runs instances in parallel; everything else
  // parallelizes over the filters of each conv layer.
  ForwardResult forward(std::span<const FeatureMap> batch, int workers, ForwardStrategy strategy = {},
                        bool record_density = false) const;

  const NetworkSpec& spec() const { return spec_; }
  // Fraction of nonzero filter weights across all conv layers after pruning.
  double filter_density() const;

 private:
  struct Layer {
    LayerSpec spec;
    SparseTensor4 sparse_filters;
    std::vector<DenseTensor3> dense_filters;
    std::vector<float> bias;
    BatchNormParams bn;
  };

  FeatureMap run_layer(const Layer& layer, FeatureMap x, Strategy strategy, int workers) const;
  FeatureMap run_instance(const FeatureMap& input, Strategy strategy, int workers, std::vector<double>* densities) const;

  NetworkSpec spec_;
  std::vector<Layer> layers_;
};

enum class BenchmarkNet { vgg16_desk, yolo_desk, vgg16_desk_noact, yolo_desk_nobn };

std::string to_string(BenchmarkNet kind);
BenchmarkNet parse_benchmark_net(std::string_view text);

// Desk scale uses 3x32x32 inputs; full scale uses 3x224x224. Channel widths are
// ceil(width * scale); scale must lie in (0, 1].
NetworkSpec build_benchmark_net(BenchmarkNet kind, double scale, bool full_scale = false);

// Random input uniform on [-1, 1] (nonzero), pruned at random to `density`.
DenseTensor3 random_input(Dims3 dims, double density, std::uint64_t seed);

struct DensityRow {
  double input_density;
  std::size_t layer_index;
  std::string layer_kind;
  double output_density;
};

// Runs a sparse_input forward pass per input density and records every layer's
// output density. `spec.variant` must be sparse_input.
std::vector<DensityRow> density_evolution(const NetworkSpec& spec, const NetworkWeights& weights,
                                          std::span<const double> input_densities, std::uint64_t seed,
                                          int workers = 1);

// Header plus one line per row: input_density,layer_index,layer_kind,output_density
void write_density_csv(std::ostream& out, std::span<const DensityRow> rows);
std::string layer_label(const LayerSpec& layer);

}  // namespace sparse_infer
