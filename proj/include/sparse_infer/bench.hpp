#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparse_infer/network.hpp"

namespace sparse_infer {

struct BenchConfig {
  BenchmarkNet net = BenchmarkNet::vgg16_desk;
  double scale = 0.25;
  bool full_scale = false;
  // Replaces the built-in net when set.
  std::optional<std::filesystem::path> model;
  std::optional<std::filesystem::path> weights;
  Variant variant = Variant::sparse_filter;
  // Percent in (0, 100]. Filter density for sparse_filter, input density for sparse_input.
  std::vector<double> densities{1, 5, 10, 20, 50, 100};
  std::vector<std::size_t> batches{1};
  std::vector<int> workers{1};
  Strategy strategy = Strategy::automatic;
  std::size_t threshold = 4;
  int reps = 3;
  int warmup = 1;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> timing_csv;
  std::optional<std::filesystem::path> density_csv;

  // Throws ConfigError on the first invalid field.
  void validate() const;
};

struct TimingRow {
  Variant variant;
  double density;  // percent, as configured
  std::size_t batch;
  int workers;
  std::string strategy;
  int rep;
  double seconds;
};

// A failure inside one grid point of the sweep.
class GridPointError : public Error {
 public:
  using Error::Error;
};

// Variants measured for a config: the configured one plus dense_baseline.
std::vector<Variant> bench_variants(const BenchConfig& cfg);

// Warmups then timed repetitions per (density, batch, workers, variant). Rows come
// out in measurement order. Writes the CSVs named in cfg and a median/min table
// to `console`.
std::vector<TimingRow> run_bench(const BenchConfig& cfg, std::ostream& console);

void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows);

struct DensityStudy {
  std::string net;
  std::vector<DensityRow> rows;
};

// Density evolution of the configured net and its ablation partner
// (vgg16_desk <-> vgg16_desk_noact, yolo_desk <-> yolo_desk_nobn) with matched
// weights and inputs. With --density-csv given, each net gets <stem>_<net><ext>.
std::vector<DensityStudy> run_density_study(const BenchConfig& cfg, std::ostream& console);

double median(std::vector<double> values);

// Spec and weights for cfg.
NetworkSpec bench_spec(const BenchConfig& cfg);
NetworkWeights bench_weights(const BenchConfig& cfg, const NetworkSpec& spec);

}  // namespace sparse_infer
