#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "duo/errors.hpp"
#include "duo/harness/config.hpp"
#include "duo/harness/experiments.hpp"
#include "duo/harness/properties.hpp"

using namespace duo;
using namespace duo::harness;

namespace {

ExperimentConfig load(const std::string& path) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

void print_summary(const StreamResult& r) {
  const toy::EvalRecord& s = r.summary;
  std::printf("%-14s F1 %.4f  P %.4f  R %.4f  depth MAE %.4f  entropy %.4f  skipped %zu/%zu\n",
              to_string(r.config.adapt.objective).c_str(), s.f1, s.precision, s.recall, s.depth_mae, s.mean_entropy,
              r.skipped_steps, r.rows.size());
}

int cmd_train(const ExperimentConfig& cfg) {
  const toy::ToyDetector det = train_source_model(cfg, &std::cout);
  const toy::EvalRecord clean = evaluate_clean(cfg, det);
  std::printf("clean F1 %.4f  depth MAE %.4f  relative depth error %.4f\n", clean.f1, clean.depth_mae,
              clean.depth_rel_error);
  return 0;
}

int cmd_run(const ExperimentConfig& cfg) {
  const toy::ToyDetector source = obtain_source_model(cfg, &std::cout);
  const StreamResult r = run_stream(cfg, source);
  write_stream_outputs(r, cfg.output_dir);
  print_summary(r);
  std::printf("wrote %s\n", (cfg.output_dir / "metrics.csv").string().c_str());
  return 0;
}

int cmd_obs1(const ExperimentConfig& cfg) {
  Runner runner(obtain_source_model(cfg, &std::cout), &std::cout);
  const Obs1Report rep = run_observation1(runner, cfg);
  write_text(cfg.output_dir / "obs1.json", to_json(rep).dump(2) + "\n");
  for (const Obs1Method& m : rep.methods)
    std::printf("%-14s q25 %.4f  q75 %.4f  dq25 %+.4f  dq75 %+.4f  skew %.3f  F1 %.4f\n",
                to_string(m.objective).c_str(), m.q25, m.q75, m.delta_q25, m.delta_q75, m.skew, m.f1);
  std::printf("duo low-score gain over entropy_min: %s, smaller skew: %s\n", rep.low_score_gain ? "yes" : "no",
              rep.smaller_skew ? "yes" : "no");
  return 0;
}

int cmd_obs2(const ExperimentConfig& cfg) {
  Runner runner(obtain_source_model(cfg, &std::cout), &std::cout);
  const Obs2Report rep = run_observation2(runner, cfg);
  write_text(cfg.output_dir / "obs2.json", to_json(rep).dump(2) + "\n");
  write_text(cfg.output_dir / "obs2_trajectory.csv", trajectory_csv(rep));
  for (const Obs2Method& m : rep.methods)
    std::printf("%-14s log-sigma drop %.4f %.4f %.4f  collapse ratio %.3f  min sigma fraction %.3f %.3f %.3f\n",
                to_string(m.objective).c_str(), m.drop[0], m.drop[1], m.drop[2], m.collapse_ratio,
                m.min_sigma_fraction[0], m.min_sigma_fraction[1], m.min_sigma_fraction[2]);
  std::printf("ratio(depth_unc_min) > 2 ratio(duo): %s, duo sigma floor: %s\n", rep.ratio_exceeds_twice ? "yes" : "no",
              rep.duo_sigma_floor ? "yes" : "no");
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
  Runner runner(obtain_source_model(cfg, &std::cout), &std::cout);
  const AblationReport rep = run_ablation(runner, cfg);
  write_text(cfg.output_dir / "ablation.json", to_json(rep).dump(2) + "\n");
  write_text(cfg.output_dir / "ablation.csv", ablation_csv(rep));
  std::printf("%-10s %4s %4s %4s %8s %8s\n", "row", "CFL", "NCL", "M", "F1", "MAE");
  for (const AblationRow& r : rep.rows)
    std::printf("%-10s %4d %4d %4d %8.4f %8.4f\n", r.name.c_str(), r.cfl, r.ncl, r.mask, r.f1, r.mae);
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg) {
  Runner runner(obtain_source_model(cfg, &std::cout), &std::cout);
  const std::vector<SweepRow> rows = run_sweep(runner, cfg);
  write_text(cfg.output_dir / "sweep.csv", sweep_csv(rows));
  for (const SweepRow& r : rows)
    std::printf("lambda %-6g alpha %-6g F1 %.4f  MAE %.4f\n", r.lambda, r.alpha, r.f1, r.mae);
  return 0;
}

int cmd_dump(const ExperimentConfig& cfg, std::size_t batch) {
  const toy::ToyDetector source = obtain_source_model(cfg, &std::cout);
  const auto dir = cfg.output_dir / "dump";
  dump_batch(cfg, source, batch, dir);
  std::printf("wrote %s\n", (dir / "dump.json").string().c_str());
  return 0;
}

int cmd_selftest() {
  bool ok = true;
  for (const CheckResult& r : run_property_suite()) {
    std::printf("%s\n", format_result(r).c_str());
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duo: test-time adaptation experiments on a toy monocular 3D detection world"};
  app.require_subcommand(1);

  std::string config;
  std::string output;
  std::size_t batch = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config, "flat key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("-o,--output", output, "output directory (overrides output_dir)");
  };
  CLI::App* train = app.add_subcommand("train", "train and cache the source model");
  CLI::App* run = app.add_subcommand("run", "adapt over a corrupted stream; writes metrics.csv and summary.json");
  CLI::App* obs1 = app.add_subcommand("obs1", "score-quantile shift of none / entropy_min / duo");
  CLI::App* obs2 = app.add_subcommand("obs2", "per-head uncertainty trajectories of depth_unc_min / duo");
  CLI::App* ablate = app.add_subcommand("ablate", "component ablation table");
  CLI::App* sweep = app.add_subcommand("sweep", "grid over lambda and alpha");
  CLI::App* dump = app.add_subcommand("dump", "DUOT tensors and a JSON sidecar for one stream batch");
  CLI::App* selftest = app.add_subcommand("selftest", "exact property suite");
  for (CLI::App* sub : {train, run, obs1, obs2, ablate, sweep, dump}) add_common(sub);
  dump->add_option("-b,--batch", batch, "batch index in the stream");

  CLI11_PARSE(app, argc, argv);

  try {
    if (selftest->parsed()) return cmd_selftest();
    ExperimentConfig cfg = load(config);
    if (!output.empty()) cfg.output_dir = output;
    if (train->parsed()) return cmd_train(cfg);
    if (run->parsed()) return cmd_run(cfg);
    if (obs1->parsed()) return cmd_obs1(cfg);
    if (obs2->parsed()) return cmd_obs2(cfg);
    if (ablate->parsed()) return cmd_ablate(cfg);
    if (sweep->parsed()) return cmd_sweep(cfg);
    if (dump->parsed()) return cmd_dump(cfg, batch);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingCheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMissingCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
