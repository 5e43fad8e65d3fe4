#include <cmath>

#include "doctest.h"
#include "duo/adaptation.hpp"
#include "duo/errors.hpp"
#include "duo/geometric_loss.hpp"
#include "duo/toy/scene.hpp"
#include "duo/toy/train.hpp"

using namespace duo;

namespace {

Detection box_detection(double u0, double v0, double u1, double v1, double score, std::size_t image = 0) {
  Detection d{Box{u0, v0, u1, v1}, ProbVector::from_values({1.0 - score, score}), score, 0, {{10.0}, {1.0}}, 10.0,
              image, 0};
  return d;
}

Tensor plane(std::size_t h, std::size_t w, double a, double b, double c) {
  Tensor t(Shape{h, w});
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) t.at(v, u) = a * static_cast<double>(u) + b * static_cast<double>(v) + c;
  return t;
}

Tensor random_images(Rng& rng, std::size_t n) {
  std::vector<toy::Scene> scenes;
  for (std::size_t i = 0; i < n; ++i) scenes.push_back(toy::generate_scene(rng, toy::SceneConfig{}));
  return toy::stack_images(scenes);
}

// Random-init detector whose objectness starts near one half, so it emits.
toy::ToyDetector emitting_detector(std::uint64_t seed) {
  Rng rng(seed);
  toy::ToyDetector det = toy::ToyDetector::init(toy::DetectorConfig{}, rng);
  det.params.at("head.b")[toy::channel::obj] = 0.0;
  return det;
}

}  // namespace

TEST_CASE("EMA threshold") {
  const EmaThreshold warm{1.0, 0.1, true};
  const std::vector<double> twos{2.0, 2.0};
  CHECK(ema_update(warm, twos).u_bar == doctest::Approx(1.1));
  const std::vector<double> three{3.0};
  const EmaThreshold first = ema_update(EmaThreshold{0.0, 0.1, false}, three);
  CHECK(first.u_bar == 3.0);
  CHECK(first.initialized);
  const std::vector<double> mixed{1.0, 5.0};
  CHECK(ema_update(EmaThreshold{7.0, 1.0, true}, mixed).u_bar == 3.0);
  const EmaThreshold same = ema_update(warm, std::vector<double>{});
  CHECK(same.u_bar == warm.u_bar);
  CHECK(same.initialized == warm.initialized);

  // Constant input mean c approaches c with ratio (1 - beta).
  EmaThreshold e{10.0, 0.25, true};
  const std::vector<double> c{2.0, 4.0};
  for (int t = 1; t <= 20; ++t) {
    e = ema_update(e, c);
    CHECK(e.u_bar - 3.0 == doctest::Approx(7.0 * std::pow(0.75, t)).epsilon(1e-12));
  }
}

TEST_CASE("reliable selection") {
  const EmaThreshold e{1.0, 0.1, true};
  CHECK(select_reliable(std::vector<double>{0.5, 1.5}, e) == std::vector<std::size_t>{0});
  CHECK(select_reliable(std::vector<double>{1.0, 1.0, 1.0}, e) == std::vector<std::size_t>{0, 1, 2});
  CHECK(select_reliable(std::vector<double>{2.0, 3.0}, e).empty());
}

TEST_CASE("region mask") {
  const std::vector<Detection> dets = {box_detection(2, 2, 4, 4, 0.8), box_detection(3, 3, 6, 6, 0.6),
                                       box_detection(3, 3, 5, 5, 0.9)};
  const std::vector<std::size_t> none;
  const Tensor empty = region_mask(dets, none, 8, 8);
  CHECK(max_abs(empty) == 0.0);

  const std::vector<std::size_t> first{0};
  const Tensor m = region_mask(dets, first, 8, 8);
  for (std::size_t v = 0; v < 8; ++v)
    for (std::size_t u = 0; u < 8; ++u) {
      const bool inside = u >= 2 && u < 4 && v >= 2 && v < 4;
      CHECK(m.at(v, u) == (inside ? 0.8 : 0.0));
    }

  const std::vector<std::size_t> overlap{1, 2};
  const Tensor o = region_mask(dets, overlap, 8, 8);
  CHECK(o.at(3, 3) == 0.9);
  CHECK(o.at(4, 4) == 0.9);
  CHECK(o.at(5, 5) == 0.6);
  CHECK(o.at(0, 0) == 0.0);

  Rng rng(12);
  std::vector<Detection> many;
  std::vector<std::size_t> all;
  double top = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    const double u = rng.uniform(-5, 20), v = rng.uniform(-5, 12), s = rng.uniform(0.05, 1.0);
    many.push_back(box_detection(u, v, u + rng.uniform(1, 10), v + rng.uniform(1, 10), s, i % 2));
    all.push_back(i);
    top = std::max(top, s);
  }
  const Tensor b = region_mask(many, all, 2, 12, 16);
  CHECK(b.shape() == Shape{2, 12, 16});
  for (double v : b.values()) CHECK((v >= 0.0 && v <= top));
  CHECK_THROWS_AS(region_mask(many, std::vector<std::size_t>{99}, 2, 12, 16), ContractViolation);
}

TEST_CASE("DUO objective") {
  const std::size_t h = 16, w = 16;
  Rng rng(13);
  Tensor intensity(Shape{h, w});
  for (double& v : intensity.values()) v = rng.uniform();
  AdaptConfig cfg;

  SUBCASE("no detections") {
    ad::Tape tape;
    EmaThreshold ema;
    const ObjectiveValue v = duo_objective({}, {}, tape.leaf(plane(h, w, 0.3, -0.2, 12)), intensity, ema, cfg);
    CHECK(v.empty);
    CHECK(v.total.value().item() == 0.0);
    CHECK(!ema.initialized);
  }
  SUBCASE("planar depth and one uniform detection") {
    ad::Tape tape;
    EmaThreshold ema;
    const std::vector<Detection> dets = {box_detection(4, 4, 12, 12, 0.5)};
    const std::vector<ad::Var> probs = {tape.leaf(Tensor::vector({0.5, 0.5}))};
    const ObjectiveValue v = duo_objective(probs, dets, tape.leaf(plane(h, w, 0.3, -0.2, 12)), intensity, ema, cfg);
    CHECK(std::abs(v.total.value().item() - 0.20469) < 1e-4);
    CHECK(std::abs(v.geometric) <= 1e-12);
    CHECK(v.selected == 1);
    CHECK(ema.u_bar == doctest::Approx(0.2047).epsilon(1e-3));
  }
  SUBCASE("lambda zero is the semantic sum") {
    ad::Tape tape;
    EmaThreshold ema;
    AdaptConfig c0 = cfg;
    c0.lambda = 0.0;
    std::vector<Detection> dets;
    std::vector<ad::Var> probs;
    double expect = 0.0;
    for (int i = 0; i < 5; ++i) {
      const double s = rng.uniform(0.2, 0.95);
      dets.push_back(box_detection(1, 1, 9, 9, s));
      const ProbVector p = ProbVector::from_values({1 - s, 0.7 * s, 0.3 * s});
      dets.back().probs = p;
      probs.push_back(tape.leaf(p.tensor()));
      expect += conjugate_focal_loss(p, cfg.focal);
    }
    Tensor bumpy(Shape{h, w});
    for (double& v : bumpy.values()) v = rng.uniform(5, 20);
    const ObjectiveValue v = duo_objective(probs, dets, tape.leaf(bumpy), intensity, ema, c0);
    CHECK(v.total.value().item() == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("an all-zero mask blocks every depth gradient") {
    ad::Tape tape;
    // A threshold that stays below every uncertainty selects nothing.
    EmaThreshold ema{-100.0, 0.0, true};
    AdaptConfig c = cfg;
    c.use_cfl = false;
    const std::vector<Detection> dets = {box_detection(2, 2, 10, 10, 0.7)};
    const std::vector<ad::Var> probs = {tape.leaf(dets[0].probs.tensor())};
    Tensor bumpy(Shape{h, w});
    for (double& v : bumpy.values()) v = rng.uniform(5, 20);
    ad::Var depth = tape.leaf(bumpy);
    const ObjectiveValue v = duo_objective(probs, dets, depth, intensity, ema, c);
    CHECK(v.selected == 0);
    const ad::GradientMap g = tape.backward(v.total);
    if (g.contains(depth))
      for (double x : g.at(depth).values()) CHECK(x == 0.0);
  }
  SUBCASE("unmasked NCL reaches the depth map") {
    ad::Tape tape;
    EmaThreshold ema;
    AdaptConfig c = cfg;
    c.mask = MaskMode::ones;
    c.use_cfl = false;
    Tensor bumpy(Shape{h, w});
    for (double& v : bumpy.values()) v = rng.uniform(5, 20);
    ad::Var depth = tape.leaf(bumpy);
    const ObjectiveValue v = duo_objective({}, {}, depth, intensity, ema, c);
    CHECK(!v.empty);
    CHECK(v.geometric == doctest::Approx(0.7 * sum(normal_consistency_loss(bumpy, intensity)) / (h * w)));
    CHECK(max_abs(tape.backward(v.total).at(depth)) > 0.0);
  }
}

TEST_CASE("entropy-min objective") {
  ad::Tape tape;
  const ObjectiveValue u = entropy_min_objective({tape.leaf(Tensor::vector({0.5, 0.5}))});
  CHECK(u.total.value().item() == doctest::Approx(std::log(2.0)));
  const ObjectiveValue c = entropy_min_objective({tape.leaf(Tensor::vector({1 - 2e-9, 1e-9, 1e-9}))});
  CHECK(c.total.value().item() < 1e-7);
  CHECK(entropy_min_objective({}).empty);
}

TEST_CASE("objective parsing and config validation") {
  for (Objective o : {Objective::duo, Objective::entropy_min, Objective::depth_unc_min, Objective::none})
    CHECK(parse_objective(to_string(o)) == o);
  CHECK_THROWS_AS(parse_objective("tent"), ContractViolation);
  AdaptConfig c;
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  c = AdaptConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  CHECK(AdaptConfig{}.norm_mode() == toy::NormMode::batch);
  AdaptConfig none;
  none.objective = Objective::none;
  CHECK(none.norm_mode() == toy::NormMode::running);
}

TEST_CASE("adaptation step") {
  Rng rng(31);
  const Tensor images = random_images(rng, 4);
  const toy::ToyDetector det = emitting_detector(32);

  SUBCASE("objective none is pure inference") {
    AdaptConfig cfg;
    cfg.objective = Objective::none;
    AdaptState s = AdaptState::create(det, cfg);
    const StepResult r = tta_step(s, images);
    CHECK(s.model.params == det.params);
    CHECK(s.model.buffers == det.buffers);
    const toy::DetectorResult direct = toy::run_detector(det, images);
    REQUIRE(r.detections.size() == direct.detections.size());
    for (std::size_t i = 0; i < r.detections.size(); ++i) CHECK(r.detections[i].score == direct.detections[i].score);
    CHECK(s.step_count == 1);
  }
  SUBCASE("lr zero leaves parameters unchanged") {
    for (Objective o : {Objective::duo, Objective::entropy_min, Objective::depth_unc_min}) {
      AdaptConfig cfg;
      cfg.objective = o;
      cfg.lr = 0.0;
      AdaptState s = AdaptState::create(det, cfg);
      const StepResult r = tta_step(s, images);
      CHECK(s.model.params == det.params);
      CHECK(r.metrics.n_dets > 0);
      CHECK(!r.metrics.skipped);
      CHECK(r.metrics.mean_log_sigma.size() == toy::kNumHeads);
      CHECK(std::isfinite(r.metrics.objective_value));
    }
  }
  SUBCASE("updates parameters and emits before the update") {
    for (Objective o : {Objective::duo, Objective::entropy_min, Objective::depth_unc_min}) {
      AdaptConfig cfg;
      cfg.objective = o;
      cfg.lr = 1e-3;
      AdaptState s = AdaptState::create(det, cfg);
      const StepResult first = tta_step(s, images);
      CHECK(s.model.params != det.params);
      const toy::DetectorResult pre = toy::run_detector(det, images, toy::NormMode::batch);
      REQUIRE(first.detections.size() == pre.detections.size());
      for (std::size_t i = 0; i < pre.detections.size(); ++i)
        CHECK(first.detections[i].score == pre.detections[i].score);
      const StepResult second = tta_step(s, images);
      CHECK(second.metrics.step == 1);
    }
  }
  SUBCASE("parameter subset") {
    AdaptConfig cfg;
    cfg.lr = 1e-3;
    cfg.params = ParamSubset::norm_and_head;
    AdaptState s = AdaptState::create(det, cfg);
    tta_step(s, images);
    for (const auto& [name, t] : det.params) {
      CAPTURE(name);
      if (!toy::is_norm_or_head_param(name)) CHECK(s.model.params.at(name) == t);
    }
  }
  SUBCASE("a skipped step leaves state bit-identical") {
    toy::ToyDetector silent = det;
    silent.params.at("head.b")[toy::channel::obj] = -30.0;
    for (Objective o : {Objective::duo, Objective::entropy_min, Objective::depth_unc_min}) {
      AdaptConfig cfg;
      cfg.objective = o;
      AdaptState s = AdaptState::create(silent, cfg);
      s.momentum_buffers.begin()->second.fill(0.25);
      const TensorMap buffers = s.momentum_buffers;
      const StepResult r = tta_step(s, images);
      CHECK(r.detections.empty());
      CHECK(r.metrics.skipped);
      CHECK(r.metrics.skip_reason == "no_detections");
      CHECK(s.model.params == silent.params);
      CHECK(s.model.buffers == silent.buffers);
      CHECK(s.momentum_buffers == buffers);
    }
  }
  SUBCASE("replays are bit-identical") {
    AdaptConfig cfg;
    cfg.lr = 1e-3;
    AdaptState a = AdaptState::create(det, cfg), b = AdaptState::create(det, cfg);
    for (int step = 0; step < 2; ++step) {
      const StepResult ra = tta_step(a, images), rb = tta_step(b, images);
      CHECK(ra.metrics.objective_value == rb.metrics.objective_value);
      CHECK(ra.metrics.mean_entropy == rb.metrics.mean_entropy);
      CHECK(ra.metrics.mean_ncl == rb.metrics.mean_ncl);
    }
    CHECK(a.model.params == b.model.params);
    CHECK(a.momentum_buffers == b.momentum_buffers);
  }
}
