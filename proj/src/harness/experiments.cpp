#include "duo/harness/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "duo/errors.hpp"
#include "duo/geometric_loss.hpp"
#include "duo/tensor_io.hpp"
#include "duo/toy/train.hpp"

namespace duo::harness {

namespace {

constexpr std::uint64_t kCorruptionStream = 77;
constexpr std::uint64_t kCleanStream = 0xC1EA7;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<double> anchored_scores(const StreamBatch& batch, const StepResult& r, const toy::DetectorConfig& dc) {
  const std::size_t g = dc.grid_h() * dc.grid_w();
  std::vector<double> out;
  for (std::size_t n = 0; n < batch.scenes.size(); ++n) {
    const toy::CellTargets t = toy::assign_cells(batch.scenes[n], dc);
    for (std::size_t cell : t.cells) {
      double best = 0.0;
      for (std::size_t k = 0; k < toy::kNumClasses; ++k)
        best = std::max(best, r.class_probs[(n * toy::kNumClasses + k) * g + cell]);
      out.push_back(r.objectness[n * g + cell] * best);
    }
  }
  return out;
}

std::vector<Detection> detections_of(const std::vector<Detection>& dets, std::size_t image) {
  std::vector<Detection> out;
  for (const Detection& d : dets)
    if (d.image == image) out.push_back(d);
  return out;
}

nlohmann::ordered_json box_json(const Box& b) { return {b.u_min, b.v_min, b.u_max, b.v_max}; }

}  // namespace

StreamBatch stream_batch(const ExperimentConfig& cfg, std::size_t batch) {
  const std::size_t bs = cfg.adapt.batch_size;
  const Rng base(cfg.seed);
  StreamBatch out;
  std::vector<Tensor> images;
  for (std::size_t i = 0; i < bs; ++i) {
    Rng scene_rng = base.fork(batch * bs + i);
    out.scenes.push_back(toy::generate_scene(scene_rng, cfg.train.scene));
    Rng noise = scene_rng.fork(kCorruptionStream);
    images.push_back(toy::corrupt(out.scenes.back().image, cfg.corruption, noise));
  }
  out.images = toy::stack_images(images);
  return out;
}

std::filesystem::path checkpoint_path(const ExperimentConfig& cfg) {
  if (!cfg.checkpoint.empty()) return cfg.checkpoint;
  char name[40];
  std::snprintf(name, sizeof name, "source_%016llx.duoc",
                static_cast<unsigned long long>(fnv1a(cfg.train.fingerprint())));
  return cfg.cache_dir / name;
}

toy::ToyDetector train_source_model(const ExperimentConfig& cfg, std::ostream* log) {
  const std::filesystem::path path = checkpoint_path(cfg);
  if (log) *log << "training source model (" << cfg.train.steps << " steps) -> " << path.string() << "\n";
  toy::TrainResult tr = toy::source_train(cfg.train);
  if (log)
    for (const toy::TrainLogEntry& e : tr.log)
      *log << "  step " << e.step << " loss " << num(e.total) << " focal " << num(e.focal) << " obj "
           << num(e.objectness) << " depth " << num(e.depth_heads) << "\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  toy::save_checkpoint(path, tr.detector);
  return tr.detector;
}

toy::ToyDetector obtain_source_model(const ExperimentConfig& cfg, std::ostream* log) {
  const std::filesystem::path path = checkpoint_path(cfg);
  if (std::filesystem::exists(path)) return toy::load_checkpoint(path, cfg.train.detector);
  if (!cfg.train_if_missing)
    throw MissingCheckpointError("source checkpoint not found: " + path.string() +
                                 " (run `duo train` or set train_if_missing = true)");
  return train_source_model(cfg, log);
}

toy::EvalRecord evaluate_clean(const ExperimentConfig& cfg, const toy::ToyDetector& det, std::size_t scenes) {
  const Rng base = Rng(cfg.seed).fork(kCleanStream);
  toy::EvalAccumulator acc;
  const std::size_t bs = cfg.adapt.batch_size;
  for (std::size_t start = 0; start < scenes; start += bs) {
    std::vector<toy::Scene> batch;
    for (std::size_t i = start; i < std::min(scenes, start + bs); ++i) {
      Rng r = base.fork(i);
      batch.push_back(toy::generate_scene(r, cfg.train.scene));
    }
    const toy::DetectorResult out = toy::run_detector(det, toy::stack_images(batch));
    for (std::size_t n = 0; n < batch.size(); ++n) acc.add(detections_of(out.detections, n), batch[n].objects);
  }
  return acc.summary();
}

StreamResult run_stream(const ExperimentConfig& cfg, const toy::ToyDetector& source) {
  cfg.validate();
  StreamResult result;
  result.config = cfg;
  AdaptState state = AdaptState::create(source, cfg.adapt);
  toy::EvalAccumulator acc;
  for (std::size_t b = 0; b < cfg.steps(); ++b) {
    const StreamBatch batch = stream_batch(cfg, b);
    StepResult r = tta_step(state, batch.images);
    for (std::size_t n = 0; n < batch.scenes.size(); ++n)
      acc.add(detections_of(r.detections, n), batch.scenes[n].objects);
    const std::vector<double> scores = anchored_scores(batch, r, source.cfg);
    result.anchored_scores.insert(result.anchored_scores.end(), scores.begin(), scores.end());
    const toy::EvalRecord running = acc.summary();
    result.skipped_steps += r.metrics.skipped ? 1 : 0;
    result.rows.push_back({std::move(r.metrics), running.f1, running.depth_mae});
  }
  result.summary = acc.summary();
  return result;
}

std::string metrics_csv(const StreamResult& r) {
  std::ostringstream os;
  os << "step,objective,n_dets,mean_entropy,mean_cfl,mean_ncl,logsig_head0,logsig_head1,logsig_head2,f1_running,"
        "mae_running,skipped\n";
  for (const StepRow& row : r.rows) {
    const StepMetrics& m = row.metrics;
    os << m.step << ',' << to_string(m.objective) << ',' << m.n_dets << ',' << num(m.mean_entropy) << ','
       << num(m.mean_cfl) << ',' << num(m.mean_ncl);
    for (std::size_t k = 0; k < toy::kNumHeads; ++k)
      os << ',' << num(k < m.mean_log_sigma.size() ? m.mean_log_sigma[k] : 0.0);
    os << ',' << num(row.f1_running) << ',' << num(row.mae_running) << ',' << (m.skipped ? 1 : 0) << '\n';
  }
  return os.str();
}

nlohmann::ordered_json summary_json(const StreamResult& r) {
  const toy::EvalRecord& s = r.summary;
  nlohmann::ordered_json first = nlohmann::ordered_json::array(), last = nlohmann::ordered_json::array();
  if (!r.rows.empty())
    for (std::size_t k = 0; k < toy::kNumHeads; ++k) {
      first.push_back(r.rows.front().metrics.mean_log_sigma[k]);
      last.push_back(r.rows.back().metrics.mean_log_sigma[k]);
    }
  return {
      {"config", to_json(r.config)},
      {"steps", r.rows.size()},
      {"skipped_steps", r.skipped_steps},
      {"f1", s.f1},
      {"precision", s.precision},
      {"recall", s.recall},
      {"depth_mae", s.depth_mae},
      {"depth_rel_error", s.depth_rel_error},
      {"mean_entropy", s.mean_entropy},
      {"detections", s.detections},
      {"true_positives", s.true_positives},
      {"false_positives", s.false_positives},
      {"false_negatives", s.false_negatives},
      {"no_detections", s.no_detections},
      {"score_q25", s.score_q25},
      {"score_q50", s.score_q50},
      {"score_q75", s.score_q75},
      {"anchored_score_q25", toy::quantile(r.anchored_scores, 0.25)},
      {"anchored_score_q75", toy::quantile(r.anchored_scores, 0.75)},
      {"log_sigma_first_step", first},
      {"log_sigma_last_step", last},
  };
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

void write_stream_outputs(const StreamResult& r, const std::filesystem::path& dir) {
  write_text(dir / "metrics.csv", metrics_csv(r));
  write_text(dir / "summary.json", summary_json(r).dump(2) + "\n");
}

const StreamResult& Runner::run(const ExperimentConfig& cfg) {
  const std::string key = to_json(cfg).dump();
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  if (log_)
    *log_ << "  run " << to_string(cfg.adapt.objective) << " on " << toy::to_string(cfg.corruption.kind) << " s"
          << cfg.corruption.severity << (cfg.adapt.use_cfl ? "" : " -cfl") << (cfg.adapt.use_ncl ? "" : " -ncl")
          << (cfg.adapt.mask == MaskMode::score ? "" : " mask=ones") << " lambda=" << num(cfg.adapt.lambda)
          << " alpha=" << num(cfg.adapt.focal.alpha) << std::endl;
  return cache_.emplace(key, run_stream(cfg, source_)).first->second;
}

ExperimentConfig with_objective(ExperimentConfig cfg, Objective o) {
  cfg.adapt.objective = o;
  return cfg;
}

Obs1Report run_observation1(Runner& runner, const ExperimentConfig& cfg) {
  Obs1Report report;
  double base25 = 0.0, base75 = 0.0;
  for (Objective o : {Objective::none, Objective::entropy_min, Objective::duo}) {
    const StreamResult& r = runner.run(with_objective(cfg, o));
    Obs1Method m;
    m.objective = o;
    m.q25 = toy::quantile(r.anchored_scores, 0.25);
    m.q75 = toy::quantile(r.anchored_scores, 0.75);
    if (o == Objective::none) base25 = m.q25, base75 = m.q75;
    m.delta_q25 = m.q25 - base25;
    m.delta_q75 = m.q75 - base75;
    m.skew = m.delta_q75 / std::max(m.delta_q25, 1e-3);
    m.f1 = r.summary.f1;
    report.methods.push_back(m);
  }
  const Obs1Method& em = report.methods[1];
  const Obs1Method& duo = report.methods[2];
  report.low_score_gain = duo.delta_q25 > em.delta_q25;
  report.smaller_skew = duo.skew < em.skew;
  return report;
}

nlohmann::ordered_json to_json(const Obs1Report& r) {
  nlohmann::ordered_json methods = nlohmann::ordered_json::array();
  for (const Obs1Method& m : r.methods)
    methods.push_back({{"objective", to_string(m.objective)},
                       {"q25", m.q25},
                       {"q75", m.q75},
                       {"delta_q25", m.delta_q25},
                       {"delta_q75", m.delta_q75},
                       {"skew_ratio", m.skew},
                       {"f1", m.f1}});
  return {{"methods", methods}, {"duo_low_score_gain", r.low_score_gain}, {"duo_smaller_skew", r.smaller_skew}};
}

Obs2Report run_observation2(Runner& runner, const ExperimentConfig& cfg) {
  Obs2Report report;
  for (Objective o : {Objective::depth_unc_min, Objective::duo}) {
    const StreamResult& r = runner.run(with_objective(cfg, o));
    Obs2Method m;
    m.objective = o;
    std::array<double, toy::kNumHeads> prev{};
    for (const StepRow& row : r.rows) {
      if (row.metrics.n_dets > 0)
        for (std::size_t k = 0; k < toy::kNumHeads; ++k) prev[k] = row.metrics.mean_log_sigma[k];
      m.trajectory.push_back(prev);
    }
    const std::size_t steps = m.trajectory.size();
    const std::size_t window = std::max<std::size_t>(1, steps / 10);
    for (std::size_t k = 0; k < toy::kNumHeads; ++k) {
      double head = 0.0, tail = 0.0, lowest = INFINITY;
      for (std::size_t t = 0; t < window; ++t) head += m.trajectory[t][k];
      for (std::size_t t = steps - window; t < steps; ++t) tail += m.trajectory[t][k];
      m.drop[k] = (head - tail) / static_cast<double>(window);
      for (const auto& row : m.trajectory) lowest = std::min(lowest, row[k]);
      m.min_sigma_fraction[k] = std::exp(lowest - m.trajectory.front()[k]);
    }
    double geo = 0.0;
    for (std::size_t k = 1; k < toy::kNumHeads; ++k) geo += m.drop[k];
    geo /= static_cast<double>(toy::kNumHeads - 1);
    m.collapse_ratio = m.drop[0] / std::max(geo, 0.05);
    report.methods.push_back(std::move(m));
  }
  const Obs2Method& dum = report.methods[0];
  const Obs2Method& duo = report.methods[1];
  report.ratio_exceeds_twice = dum.collapse_ratio > 2.0 * duo.collapse_ratio;
  report.duo_sigma_floor = true;
  for (double f : duo.min_sigma_fraction) report.duo_sigma_floor = report.duo_sigma_floor && f >= 0.1;
  report.step0_identical = dum.trajectory.front() == duo.trajectory.front();
  return report;
}

nlohmann::ordered_json to_json(const Obs2Report& r) {
  nlohmann::ordered_json methods = nlohmann::ordered_json::array();
  for (const Obs2Method& m : r.methods)
    methods.push_back({{"objective", to_string(m.objective)},
                       {"log_sigma_drop", m.drop},
                       {"collapse_ratio", m.collapse_ratio},
                       {"min_sigma_fraction", m.min_sigma_fraction},
                       {"log_sigma_first_step", m.trajectory.front()},
                       {"log_sigma_last_step", m.trajectory.back()}});
  return {{"methods", methods},
          {"ratio_exceeds_twice", r.ratio_exceeds_twice},
          {"duo_sigma_floor", r.duo_sigma_floor},
          {"step0_identical", r.step0_identical}};
}

std::string trajectory_csv(const Obs2Report& r) {
  std::ostringstream os;
  os << "step,method,logsig_head0,logsig_head1,logsig_head2\n";
  for (const Obs2Method& m : r.methods)
    for (std::size_t t = 0; t < m.trajectory.size(); ++t) {
      os << t << ',' << to_string(m.objective);
      for (double v : m.trajectory[t]) os << ',' << num(v);
      os << '\n';
    }
  return os.str();
}

AblationReport run_ablation(Runner& runner, const ExperimentConfig& cfg) {
  struct Variant {
    const char* name;
    bool cfl, ncl, mask;
  };
  static constexpr Variant variants[] = {{"Src", false, false, false},     {"CFL", true, false, false},
                                         {"NCL", false, true, false},      {"CFL+NCL", true, true, false},
                                         {"NCL+M", false, true, true},     {"CFL+NCL+M", true, true, true}};
  AblationReport report;
  for (const Variant& v : variants) {
    ExperimentConfig c = cfg;
    if (!v.cfl && !v.ncl) {
      c.adapt.objective = Objective::none;
    } else {
      c.adapt.objective = Objective::duo;
      c.adapt.use_cfl = v.cfl;
      c.adapt.use_ncl = v.ncl;
      c.adapt.mask = v.mask ? MaskMode::score : MaskMode::ones;
    }
    const StreamResult& r = runner.run(c);
    report.rows.push_back({v.name, v.cfl, v.ncl, v.mask, r.summary.f1, r.summary.depth_mae});
  }
  const double full = report.rows[5].f1;
  report.full_beats_single = full >= report.rows[1].f1 && full >= report.rows[2].f1 && full >= report.rows[4].f1;
  report.masked_ncl_not_worse = report.rows[4].f1 >= report.rows[2].f1;
  return report;
}

nlohmann::ordered_json to_json(const AblationReport& r) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const AblationRow& row : r.rows)
    rows.push_back({{"name", row.name},
                    {"cfl", row.cfl},
                    {"ncl", row.ncl},
                    {"mask", row.mask},
                    {"f1", row.f1},
                    {"depth_mae", row.mae}});
  return {{"rows", rows},
          {"full_beats_single", r.full_beats_single},
          {"masked_ncl_not_worse", r.masked_ncl_not_worse}};
}

std::string ablation_csv(const AblationReport& r) {
  std::ostringstream os;
  os << "name,cfl,ncl,mask,f1,depth_mae\n";
  for (const AblationRow& row : r.rows)
    os << row.name << ',' << row.cfl << ',' << row.ncl << ',' << row.mask << ',' << num(row.f1) << ','
       << num(row.mae) << '\n';
  return os.str();
}

std::vector<SweepRow> run_sweep(Runner& runner, const ExperimentConfig& cfg) {
  std::vector<SweepRow> rows;
  for (double lambda : cfg.sweep_lambda)
    for (double alpha : cfg.sweep_alpha) {
      ExperimentConfig c = with_objective(cfg, Objective::duo);
      c.adapt.lambda = lambda;
      c.adapt.focal.alpha = alpha;
      const StreamResult& r = runner.run(c);
      rows.push_back({lambda, alpha, r.summary.f1, r.summary.depth_mae});
    }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "lambda,alpha,f1,depth_mae\n";
  for (const SweepRow& r : rows) os << num(r.lambda) << ',' << num(r.alpha) << ',' << num(r.f1) << ',' << num(r.mae) << '\n';
  return os.str();
}

void dump_batch(const ExperimentConfig& cfg, const toy::ToyDetector& source, std::size_t batch,
                const std::filesystem::path& dir) {
  cfg.validate();
  const StreamBatch b = stream_batch(cfg, batch);
  std::filesystem::create_directories(dir);
  const std::size_t n = b.scenes.size(), h = source.cfg.height, w = source.cfg.width;

  std::vector<Tensor> clean;
  Tensor gt_depth(Shape{n, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    clean.push_back(b.scenes[i].image);
    std::copy(b.scenes[i].depth.values().begin(), b.scenes[i].depth.values().end(),
              gt_depth.values().begin() + static_cast<std::ptrdiff_t>(i * h * w));
  }

  ad::Tape tape;
  const toy::ParamVars p = toy::bind_params(tape, source.params, {});
  const toy::DenseOutputs out = toy::detector_forward(tape, source, p, b.images, toy::NormMode::running);
  const std::vector<Detection> dets = toy::decode(out, source.cfg);
  const Tensor& obj = out.obj_logit.value();
  Tensor objectness(Shape{obj.dim(0), obj.dim(2), obj.dim(3)});
  for (std::size_t i = 0; i < obj.size(); ++i) objectness[i] = 1.0 / (1.0 + std::exp(-obj[i]));
  const Tensor depth = toy::fused_depth_map(out, source.cfg).value();
  const Tensor intensity = luma(b.images);

  std::vector<double> u;
  for (const Detection& d : dets) u.push_back(semantic_uncertainty(d.probs, cfg.adapt.focal));
  const EmaThreshold ema = ema_update(EmaThreshold{0.0, cfg.adapt.beta, false}, u);
  const std::vector<std::size_t> selected = select_reliable(u, ema);

  const std::map<std::string, Tensor> tensors = {
      {"clean", toy::stack_images(clean)},
      {"images", b.images},
      {"gt_depth", gt_depth},
      {"objectness", objectness},
      {"fused_depth", depth},
      {"ncl", normal_consistency_loss(depth, intensity)},
      {"mask", region_mask(dets, selected, n, h, w)},
  };
  nlohmann::ordered_json side;
  side["config"] = to_json(cfg);
  side["batch"] = batch;
  nlohmann::ordered_json files = nlohmann::ordered_json::object();
  for (const auto& [name, t] : tensors) {
    save_tensor(dir / (name + ".duot"), t);
    files[name + ".duot"] = t.shape();
  }
  side["tensors"] = files;
  nlohmann::ordered_json scenes = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < n; ++i) {
    nlohmann::ordered_json gt = nlohmann::ordered_json::array(), pred = nlohmann::ordered_json::array();
    for (const toy::GtObject& o : b.scenes[i].objects)
      gt.push_back({{"box", box_json(o.box)}, {"class", o.cls}, {"depth", o.depth}});
    for (std::size_t k = 0; k < dets.size(); ++k) {
      const Detection& d = dets[k];
      if (d.image != i) continue;
      const bool sel = std::find(selected.begin(), selected.end(), k) != selected.end();
      pred.push_back({{"box", box_json(d.box)},
                      {"class", d.cls},
                      {"score", d.score},
                      {"depth", d.depth},
                      {"head_depths", d.heads.z},
                      {"head_sigmas", d.heads.sigma},
                      {"semantic_uncertainty", u[k]},
                      {"selected", sel}});
    }
    scenes.push_back({{"seed", b.scenes[i].seed}, {"objects", gt}, {"detections", pred}});
  }
  side["scenes"] = scenes;
  write_text(dir / "dump.json", side.dump(2) + "\n");
}

}  // namespace duo::harness
