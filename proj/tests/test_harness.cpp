#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "duo/harness/config.hpp"
#include "duo/harness/experiments.hpp"
#include "duo/harness/properties.hpp"
#include "duo/tensor_io.hpp"

using namespace duo;
using namespace duo::harness;
namespace fs = std::filesystem;

namespace {

toy::ToyDetector emitting_detector() {
  Rng rng(41);
  toy::ToyDetector det = toy::ToyDetector::init(toy::DetectorConfig{}, rng);
  det.params.at("head.b")[toy::channel::obj] = 0.0;
  return det;
}

ExperimentConfig small_config(Objective o) {
  ExperimentConfig cfg;
  cfg.adapt.objective = o;
  cfg.adapt.batch_size = 4;
  cfg.adapt.lr = 1e-3;
  cfg.stream_length = 12;
  return cfg;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("duo_harness_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + DUO_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig d;
  CHECK(d.seed == 2024);
  CHECK(d.stream_length == 1600);
  CHECK(d.adapt.batch_size == 16);
  CHECK(d.adapt.lambda == 0.7);
  CHECK(d.adapt.focal.alpha == 4.0);
  CHECK(d.adapt.focal.gamma == 2.0);
  CHECK(d.adapt.momentum == 0.9);
  CHECK(d.corruption.severity == 5);
  CHECK(d.steps() == 100);
  CHECK_NOTHROW(d.validate());

  const ExperimentConfig c = parse_config(
      "# comment line\n"
      "seed = 9\n"
      "corruption = fog_haze   # trailing comment\n"
      "severity = 3\n"
      "objective = entropy_min\n"
      "lambda = 0.25\n"
      "mask = ones\n"
      "use_cfl = false\n"
      "sweep_alpha = 1, 2.5\n"
      "\n");
  CHECK(c.seed == 9);
  CHECK(c.corruption.kind == toy::CorruptionKind::fog_haze);
  CHECK(c.corruption.severity == 3);
  CHECK(c.adapt.objective == Objective::entropy_min);
  CHECK(c.adapt.lambda == 0.25);
  CHECK(c.adapt.mask == MaskMode::ones);
  CHECK(!c.adapt.use_cfl);
  CHECK(c.sweep_alpha == std::vector<double>{1.0, 2.5});

  CHECK_THROWS_AS(parse_config("lamda = 0.3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lambda = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("objective = tent\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("corruption = snow\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("mask = half\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("severity = 6\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_config("stream_length = 100\n").validate(), ConfigError);
  CHECK_THROWS_AS(parse_config("lambda = -1\n").validate(), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/duo.cfg"), ConfigError);
}

TEST_CASE("DUO_SEED overrides the configured seed") {
  ExperimentConfig c = parse_config("seed = 5\n");
  setenv("DUO_SEED", "77", 1);
  apply_env_overrides(c);
  CHECK(c.seed == 77);
  setenv("DUO_SEED", "x", 1);
  CHECK_THROWS_AS(apply_env_overrides(c), ConfigError);
  unsetenv("DUO_SEED");
  apply_env_overrides(c);
  CHECK(c.seed == 77);
}

TEST_CASE("streams are deterministic and order-free") {
  const ExperimentConfig cfg = small_config(Objective::none);
  const StreamBatch a = stream_batch(cfg, 2), b = stream_batch(cfg, 2);
  CHECK(a.images == b.images);
  CHECK(a.images.shape() == Shape{4, 3, 64, 96});
  CHECK(stream_batch(cfg, 1).images != a.images);
  ExperimentConfig other = cfg;
  other.seed = 1;
  CHECK(stream_batch(other, 2).images != a.images);
}

TEST_CASE("missing checkpoint") {
  ExperimentConfig cfg;
  cfg.cache_dir = scratch("cache");
  cfg.train_if_missing = false;
  CHECK_THROWS_AS(obtain_source_model(cfg, nullptr), MissingCheckpointError);
  CHECK(checkpoint_path(cfg).parent_path() == cfg.cache_dir);
  ExperimentConfig other = cfg;
  other.train.seed = 8;
  CHECK(checkpoint_path(other) != checkpoint_path(cfg));
}

TEST_CASE("run_stream") {
  const toy::ToyDetector det = emitting_detector();

  SUBCASE("objective none matches a direct evaluation") {
    const ExperimentConfig cfg = small_config(Objective::none);
    const StreamResult r = run_stream(cfg, det);
    toy::EvalAccumulator acc;
    for (std::size_t b = 0; b < cfg.steps(); ++b) {
      const StreamBatch batch = stream_batch(cfg, b);
      const toy::DetectorResult out = toy::run_detector(det, batch.images);
      for (std::size_t n = 0; n < batch.scenes.size(); ++n) {
        std::vector<Detection> mine;
        for (const Detection& d : out.detections)
          if (d.image == n) mine.push_back(d);
        acc.add(mine, batch.scenes[n].objects);
      }
    }
    CHECK(r.summary.f1 == acc.summary().f1);
    CHECK(r.summary.depth_mae == acc.summary().depth_mae);
  }
  SUBCASE("same config gives byte-identical outputs") {
    const ExperimentConfig cfg = small_config(Objective::duo);
    const fs::path a = scratch("run_a"), b = scratch("run_b");
    write_stream_outputs(run_stream(cfg, det), a);
    write_stream_outputs(run_stream(cfg, det), b);
    CHECK(read_file(a / "metrics.csv") == read_file(b / "metrics.csv"));
    CHECK(read_file(a / "summary.json") == read_file(b / "summary.json"));
  }
  SUBCASE("CSV schema") {
    const StreamResult r = run_stream(small_config(Objective::entropy_min), det);
    const std::string csv = metrics_csv(r);
    std::istringstream in(csv);
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "step,objective,n_dets,mean_entropy,mean_cfl,mean_ncl,logsig_head0,logsig_head1,logsig_head2,f1_running,"
          "mae_running,skipped");
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line);) {
      ++rows;
      CHECK(std::count(line.begin(), line.end(), ',') == 11);
    }
    CHECK(rows == 3);
    const auto j = summary_json(r);
    for (const char* key : {"f1", "depth_mae", "mean_entropy", "log_sigma_first_step", "log_sigma_last_step"})
      CHECK(j.contains(key));
  }
}

TEST_CASE("comparison experiments") {
  Runner runner(emitting_detector());
  const ExperimentConfig cfg = small_config(Objective::duo);

  const Obs1Report o1 = run_observation1(runner, cfg);
  REQUIRE(o1.methods.size() == 3);
  CHECK(o1.methods[0].objective == Objective::none);
  CHECK(o1.methods[0].delta_q25 == 0.0);
  CHECK(o1.methods[0].delta_q75 == 0.0);
  const auto j1 = to_json(o1);
  CHECK(j1["methods"][0].size() == 7);

  const Obs2Report o2 = run_observation2(runner, cfg);
  REQUIRE(o2.methods.size() == 2);
  for (const Obs2Method& m : o2.methods) CHECK(m.trajectory.size() == cfg.steps());
  CHECK(o2.step0_identical);

  const AblationReport ab = run_ablation(runner, cfg);
  REQUIRE(ab.rows.size() == 6);
  CHECK(ab.rows[0].name == "Src");
  CHECK(ab.rows[5].name == "CFL+NCL+M");
  const StreamResult& none = runner.run(with_objective(cfg, Objective::none));
  CHECK(ab.rows[0].f1 == none.summary.f1);
  CHECK(ab.rows[5].f1 == runner.run(cfg).summary.f1);

  ExperimentConfig sweep = cfg;
  sweep.sweep_lambda = {0.0, 0.7};
  sweep.sweep_alpha = {4.0};
  const auto rows = run_sweep(runner, sweep);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].f1 == ab.rows[5].f1);
}

TEST_CASE("dump writes tensors and a sidecar") {
  const fs::path dir = scratch("dump");
  dump_batch(small_config(Objective::duo), emitting_detector(), 0, dir);
  for (const char* name : {"clean", "images", "gt_depth", "objectness", "fused_depth", "ncl", "mask"})
    CHECK(fs::exists(dir / (std::string(name) + ".duot")));
  CHECK(load_tensor(dir / "fused_depth.duot").shape() == Shape{4, 64, 96});
  const auto side = nlohmann::json::parse(read_file(dir / "dump.json"));
  CHECK(side["scenes"].size() == 4);
}

TEST_CASE("property suite passes") {
  for (const CheckResult& r : run_property_suite()) {
    CAPTURE(format_result(r));
    CHECK(r.pass);
  }
}

TEST_CASE("CLI exit codes") {
  const fs::path dir = scratch("cli");
  std::ofstream(dir / "unknown.cfg") << "bogus_key = 1\n";
  std::ofstream(dir / "missing.cfg") << "train_if_missing = false\ncache_dir = " << (dir / "empty").string() << "\n";
  CHECK(run_cli("run --config \"" + (dir / "unknown.cfg").string() + "\"") == kExitConfig);
  CHECK(run_cli("run --config \"" + (dir / "missing.cfg").string() + "\"") == kExitMissingCheckpoint);
  CHECK(run_cli("obs1 --config \"" + (dir / "missing.cfg").string() + "\"") == kExitMissingCheckpoint);
  CHECK(run_cli("selftest") == 0);
}
