#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "sparse_infer/bench.hpp"

using namespace sparse_infer;
namespace fs = std::filesystem;

namespace {

BenchConfig small_config() {
  BenchConfig cfg;
  cfg.scale = 0.125;
  cfg.densities = {1, 100};
  cfg.reps = 3;
  return cfg;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Everything but the trailing seconds column.
std::string without_times(const std::vector<TimingRow>& rows) {
  std::ostringstream out;
  for (const TimingRow& r : rows)
    out << to_string(r.variant) << r.density << r.batch << r.workers << r.strategy << r.rep << '\n';
  return out.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPARSE_INFER_BENCH_EXE) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("sparse_infer_test_" + name); }

}  // namespace

TEST_CASE("timing rows follow the grid size contract") {
  BenchConfig cfg = small_config();
  std::ostringstream console;
  CHECK(run_bench(cfg, console).size() == 2 * 1 * 1 * 3 * 2);

  cfg.batches = {1, 2};
  cfg.workers = {1, 2};
  const auto rows = run_bench(cfg, console);
  CHECK(rows.size() == 2 * 2 * 2 * 3 * 2);
  for (const TimingRow& r : rows) CHECK(r.seconds > 0.0);

  cfg.variant = Variant::dense_baseline;
  CHECK(run_bench(cfg, console).size() == 2 * 2 * 2 * 3);

  cfg = small_config();
  cfg.variant = Variant::sparse_input;
  const auto sin = run_bench(cfg, console);
  CHECK(sin.size() == 12);
  CHECK(sin.front().variant == Variant::sparse_input);
  CHECK(sin.front().strategy == "na");
}

TEST_CASE("timing CSV layout and seed reproducibility") {
  BenchConfig cfg = small_config();
  cfg.timing_csv = temp_path("timing.csv");
  cfg.density_csv = temp_path("density.csv");
  std::ostringstream console;
  const auto a = run_bench(cfg, console);
  const auto b = run_bench(cfg, console);
  CHECK(without_times(a) == without_times(b));
  const auto lines = lines_of(*cfg.timing_csv);
  REQUIRE(lines.size() == 13);
  CHECK(lines[0] == "variant,density,batch,workers,strategy,rep,seconds");
  CHECK(lines[1].starts_with("sparse_filter,1,1,1,1,0,"));
  CHECK(lines[2].starts_with("dense_baseline,1,1,1,na,0,"));
  const auto dl = lines_of(*cfg.density_csv);
  CHECK(dl[0] == "input_density,layer_index,layer_kind,output_density");
  CHECK(dl.size() == 1 + 2 * build_benchmark_net(BenchmarkNet::vgg16_desk, 0.125).layers.size());
  CHECK(console.str().find("median_s") != std::string::npos);
  fs::remove(*cfg.timing_csv);
  fs::remove(*cfg.density_csv);
}

TEST_CASE("density study covers the net and its ablation partner") {
  BenchConfig cfg = small_config();
  cfg.net = BenchmarkNet::yolo_desk;
  cfg.variant = Variant::sparse_input;
  cfg.density_csv = temp_path("study.csv");
  std::ostringstream console;
  const auto studies = run_density_study(cfg, console);
  REQUIRE(studies.size() == 2);
  CHECK(studies[0].net == "yolo_desk");
  CHECK(studies[1].net == "yolo_desk_nobn");
  for (const DensityStudy& s : studies) {
    const fs::path p = temp_path("study_" + s.net + ".csv");
    CHECK(lines_of(p).size() == 1 + s.rows.size());
    fs::remove(p);
  }
  cfg.variant = Variant::sparse_filter;
  CHECK_THROWS_AS(run_density_study(cfg, console), ConfigError);
}

TEST_CASE("config validation") {
  BenchConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  auto bad = [&](auto mutate) {
    BenchConfig c = small_config();
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](BenchConfig& c) { c.reps = 2; });
  bad([](BenchConfig& c) { c.warmup = 0; });
  bad([](BenchConfig& c) { c.densities = {0}; });
  bad([](BenchConfig& c) { c.densities = {101}; });
  bad([](BenchConfig& c) { c.batches = {0}; });
  bad([](BenchConfig& c) { c.workers = {}; });
  bad([](BenchConfig& c) { c.scale = 0; });
  bad([](BenchConfig& c) { c.threshold = 0; });
}

TEST_CASE("median") {
  CHECK(median({3, 1, 2}) == 2);
  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK_THROWS_AS(median({}), ConfigError);
}

TEST_CASE("CLI exit codes") {
  CHECK(run_cli("--scale 0.125 --density 1,100 --reps 3") == 0);
  CHECK(run_cli("--reps 2") == 2);
  CHECK(run_cli("--warmup 0") == 2);
  CHECK(run_cli("--strategy 3") == 2);
  CHECK(run_cli("--net resnet") == 2);
  CHECK(run_cli("--density 1,abc") == 2);
  CHECK(run_cli("--variant sparse") == 2);
  CHECK(run_cli("--no-such-flag") == 2);

  // A weight file for another net parses but does not fit: runtime failure.
  const fs::path w = temp_path("weights.fsnw");
  const NetworkSpec yolo = build_benchmark_net(BenchmarkNet::yolo_desk, 0.125);
  save_weights(w, random_weights(yolo, 1));
  CHECK(run_cli("--scale 0.125 --density 100 --weights " + w.string()) == 1);
  CHECK(run_cli("--net yolo_desk --scale 0.125 --density 100 --weights " + w.string()) == 0);
  fs::remove(w);
}
