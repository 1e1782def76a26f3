#include "sparse_infer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

#include "sparse_infer/convert.hpp"

namespace sparse_infer {

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

std::string strategy_label(Variant v, Strategy s) {
  return v == Variant::sparse_filter ? to_string(s) : "na";
}

BenchmarkNet ablation_partner(BenchmarkNet k) {
  switch (k) {
    case BenchmarkNet::vgg16_desk: return BenchmarkNet::vgg16_desk_noact;
    case BenchmarkNet::vgg16_desk_noact: return BenchmarkNet::vgg16_desk;
    case BenchmarkNet::yolo_desk: return BenchmarkNet::yolo_desk_nobn;
    case BenchmarkNet::yolo_desk_nobn: return BenchmarkNet::yolo_desk;
  }
  return k;
}

bool has_activation(BenchmarkNet k) { return k == BenchmarkNet::vgg16_desk || k == BenchmarkNet::yolo_desk; }

// Keeps only the conv parameters, for the ablated nets.
NetworkWeights conv_only(const NetworkWeights& w) {
  NetworkWeights out;
  for (const LayerParams& p : w.layers)
    if (std::holds_alternative<ConvParams>(p)) out.layers.push_back(p);
  return out;
}

}  // namespace

void BenchConfig::validate() const {
  if (!(scale > 0.0 && scale <= 1.0)) throw ConfigError("--scale must lie in (0, 1]");
  if (densities.empty()) throw ConfigError("--density needs at least one value");
  for (double d : densities)
    if (!(d > 0.0 && d <= 100.0)) throw ConfigError("--density values must lie in (0, 100], got " + fmt("%g", d));
  if (batches.empty()) throw ConfigError("--batch needs at least one value");
  for (std::size_t b : batches)
    if (b == 0) throw ConfigError("--batch values must be positive");
  if (workers.empty()) throw ConfigError("--workers needs at least one value");
  for (int w : workers)
    if (w < 1) throw ConfigError("--workers values must be positive");
  if (reps < 3) throw ConfigError("--reps must be at least 3");
  if (warmup < 1) throw ConfigError("--warmup must be at least 1");
  if (threshold == 0) throw ConfigError("--threshold must be positive");
}

std::vector<Variant> bench_variants(const BenchConfig& cfg) {
  if (cfg.variant == Variant::dense_baseline) return {Variant::dense_baseline};
  return {cfg.variant, Variant::dense_baseline};
}

NetworkSpec bench_spec(const BenchConfig& cfg) {
  NetworkSpec spec = cfg.model ? load_model(*cfg.model) : build_benchmark_net(cfg.net, cfg.scale, cfg.full_scale);
  spec.validate();
  return spec;
}

NetworkWeights bench_weights(const BenchConfig& cfg, const NetworkSpec& spec) {
  return cfg.weights ? load_weights(*cfg.weights, spec) : random_weights(spec, cfg.seed);
}

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_timing_csv(std::ostream& out, std::span<const TimingRow> rows) {
  out << "variant,density,batch,workers,strategy,rep,seconds\n";
  for (const TimingRow& r : rows) {
    out << to_string(r.variant) << ',' << fmt("%g", r.density) << ',' << r.batch << ',' << r.workers << ','
        << r.strategy << ',' << r.rep << ',' << fmt("%.9g", r.seconds) << '\n';
  }
}

std::vector<TimingRow> run_bench(const BenchConfig& cfg, std::ostream& console) {
  cfg.validate();
  NetworkSpec spec = bench_spec(cfg);
  const NetworkWeights weights = bench_weights(cfg, spec);
  const std::vector<Variant> variants = bench_variants(cfg);
  const ForwardStrategy strategy{cfg.strategy, cfg.threshold};
  const bool input_sweep = cfg.variant == Variant::sparse_input;

  std::vector<TimingRow> rows;
  char line[160];
  std::snprintf(line, sizeof(line), "%-15s %8s %6s %8s %8s %12s %12s %8s\n", "variant", "density%", "batch", "workers",
                "strategy", "median_s", "min_s", "speedup");
  console << spec.name << " (" << to_string(cfg.variant) << ", " << cfg.reps << " reps, " << cfg.warmup
          << " warmup)\n"
          << line;

  for (double pct : cfg.densities) {
    const double d = pct / 100.0;
    const double filter_density = input_sweep ? 1.0 : d;
    const double input_density = input_sweep ? d : 1.0;
    // Weight pruning and sparsification stay outside the timed region.
    std::map<Variant, PreparedNetwork> nets;
    for (Variant v : variants) {
      spec.variant = v;
      nets.emplace(v, PreparedNetwork(spec, weights, filter_density, cfg.seed));
    }
    for (std::size_t batch : cfg.batches) {
      std::vector<DenseTensor3> inputs;
      for (std::size_t i = 0; i < batch; ++i) inputs.push_back(random_input(spec.input, input_density, cfg.seed + i));
      std::map<Variant, std::vector<FeatureMap>> batches;
      for (Variant v : variants) {
        auto& b = batches[v];
        for (const DenseTensor3& x : inputs) {
          if (v == Variant::sparse_input) {
            b.emplace_back(sparsify_tensor3(x, AxisOrder3::chw));
          } else {
            b.emplace_back(x);
          }
        }
      }
      for (int workers : cfg.workers) {
        std::map<Variant, std::vector<double>> times;
        std::map<Variant, Strategy> used;
        try {
          for (int i = 0; i < cfg.warmup; ++i)
            for (Variant v : variants) nets.at(v).forward(batches[v], workers, strategy);
          for (int rep = 0; rep < cfg.reps; ++rep) {
            for (Variant v : variants) {
              const auto start = std::chrono::steady_clock::now();
              const ForwardResult r = nets.at(v).forward(batches[v], workers, strategy);
              const auto stop = std::chrono::steady_clock::now();
              const double seconds = std::chrono::duration<double>(stop - start).count();
              used[v] = r.record.strategy;
              times[v].push_back(seconds);
              rows.push_back({v, pct, batch, workers, strategy_label(v, r.record.strategy), rep, seconds});
            }
          }
        } catch (const std::exception& e) {
          throw GridPointError("grid point density=" + fmt("%g", pct) + "% batch=" + std::to_string(batch) +
                               " workers=" + std::to_string(workers) + ": " + e.what());
        }
        const double base = median(times[Variant::dense_baseline]);
        for (Variant v : variants) {
          const double med = median(times[v]);
          const double mn = *std::min_element(times[v].begin(), times[v].end());
          std::snprintf(line, sizeof(line), "%-15s %8g %6zu %8d %8s %12.6f %12.6f %8.2f\n", to_string(v).c_str(), pct,
                        batch, workers, strategy_label(v, used[v]).c_str(), med, mn, base / med);
          console << line;
        }
      }
    }
  }

  if (cfg.timing_csv) {
    std::ofstream out = open_csv(*cfg.timing_csv);
    write_timing_csv(out, rows);
  }
  if (cfg.density_csv) {
    NetworkSpec study = spec;
    study.variant = Variant::sparse_input;
    std::vector<double> fractions;
    for (double pct : cfg.densities) fractions.push_back(pct / 100.0);
    const int workers = cfg.workers.front();
    const auto density_rows = density_evolution(study, weights, fractions, cfg.seed, workers);
    std::ofstream out = open_csv(*cfg.density_csv);
    write_density_csv(out, density_rows);
  }
  return rows;
}

std::vector<DensityStudy> run_density_study(const BenchConfig& cfg, std::ostream& console) {
  cfg.validate();
  if (cfg.variant != Variant::sparse_input) throw ConfigError("the density study needs --variant sparse_input");
  std::vector<double> fractions;
  for (double pct : cfg.densities) fractions.push_back(pct / 100.0);
  const int workers = cfg.workers.front();

  std::vector<std::pair<NetworkSpec, NetworkWeights>> nets;
  if (cfg.model) {
    NetworkSpec spec = bench_spec(cfg);
    NetworkWeights w = bench_weights(cfg, spec);
    nets.emplace_back(std::move(spec), std::move(w));
  } else {
    // Weights come from the net with activations/BN; the ablated net keeps the same convs.
    const BenchmarkNet full = has_activation(cfg.net) ? cfg.net : ablation_partner(cfg.net);
    const NetworkSpec full_spec = build_benchmark_net(full, cfg.scale, cfg.full_scale);
    const NetworkWeights w = cfg.weights ? load_weights(*cfg.weights, build_benchmark_net(cfg.net, cfg.scale, cfg.full_scale))
                                         : random_weights(full_spec, cfg.seed);
    for (BenchmarkNet k : {cfg.net, ablation_partner(cfg.net)}) {
      NetworkSpec spec = build_benchmark_net(k, cfg.scale, cfg.full_scale);
      const bool wants_bn = k == BenchmarkNet::yolo_desk;
      const bool have_bn = std::any_of(w.layers.begin(), w.layers.end(),
                                       [](const LayerParams& p) { return std::holds_alternative<BatchNormParams>(p); });
      if (wants_bn && !have_bn) continue;  // loaded conv-only weights cannot drive the BN partner
      nets.emplace_back(std::move(spec), wants_bn ? w : conv_only(w));
    }
  }

  std::vector<DensityStudy> studies;
  for (auto& [spec, w] : nets) {
    spec.variant = Variant::sparse_input;
    DensityStudy s{spec.name, density_evolution(spec, w, fractions, cfg.seed, workers)};
    console << spec.name << " output density per layer\n";
    for (double d : fractions) {
      console << "  input " << fmt("%6.3g", d) << ":";
      for (const DensityRow& r : s.rows)
        if (r.input_density == d) console << ' ' << fmt("%.3f", r.output_density);
      console << '\n';
    }
    studies.push_back(std::move(s));
  }

  if (cfg.density_csv) {
    const std::filesystem::path& p = *cfg.density_csv;
    for (const DensityStudy& s : studies) {
      std::filesystem::path out_path = p.parent_path() / (p.stem().string() + "_" + s.net + p.extension().string());
      std::ofstream out = open_csv(out_path);
      write_density_csv(out, s.rows);
      console << "wrote " << out_path.string() << '\n';
    }
  }
  return studies;
}

}  // namespace sparse_infer
