#include "duo/adaptation.hpp"

#include <algorithm>
#include <cmath>

#include "duo/depth_fusion.hpp"
#include "duo/errors.hpp"
#include "duo/geometric_loss.hpp"
#include "duo/toy/evaluate.hpp"
#include "duo/toy/scene.hpp"

namespace duo {

std::string to_string(Objective o) {
  switch (o) {
    case Objective::duo: return "duo";
    case Objective::entropy_min: return "entropy_min";
    case Objective::depth_unc_min: return "depth_unc_min";
    case Objective::none: return "none";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  for (Objective o : {Objective::duo, Objective::entropy_min, Objective::depth_unc_min, Objective::none})
    if (to_string(o) == name) return o;
  throw ContractViolation("unknown objective '" + name + "'");
}

void AdaptConfig::validate() const {
  DUO_REQUIRE(std::isfinite(lambda) && lambda >= 0, "lambda must be >= 0");
  DUO_REQUIRE(std::isfinite(lr) && lr >= 0, "lr must be >= 0");
  DUO_REQUIRE(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
  DUO_REQUIRE(beta >= 0 && beta <= 1, "beta must lie in [0, 1]");
  DUO_REQUIRE(batch_size > 0, "batch_size must be positive");
  focal.validate();
}

toy::NormMode AdaptConfig::norm_mode() const {
  switch (norm_stats) {
    case NormStats::running: return toy::NormMode::running;
    case NormStats::batch: return toy::NormMode::batch;
    case NormStats::automatic: break;
  }
  return adapts() ? toy::NormMode::batch : toy::NormMode::running;
}

EmaThreshold ema_update(const EmaThreshold& ema, std::span<const double> u) {
  if (u.empty()) return ema;
  double mean = 0.0;
  for (double v : u) mean += v;
  mean /= static_cast<double>(u.size());
  EmaThreshold out = ema;
  out.u_bar = ema.initialized ? ema.beta * mean + (1.0 - ema.beta) * ema.u_bar : mean;
  out.initialized = true;
  return out;
}

std::vector<std::size_t> select_reliable(std::span<const double> u, const EmaThreshold& ema) {
  std::vector<std::size_t> r;
  for (std::size_t i = 0; i < u.size(); ++i)
    if (u[i] <= ema.u_bar) r.push_back(i);
  return r;
}

Tensor region_mask(const std::vector<Detection>& dets, std::span<const std::size_t> selected, std::size_t height,
                   std::size_t width) {
  Tensor m = region_mask(dets, selected, 1, height, width);
  return m.reshaped(Shape{height, width});
}

Tensor region_mask(const std::vector<Detection>& dets, std::span<const std::size_t> selected, std::size_t images,
                   std::size_t height, std::size_t width) {
  Tensor m(Shape{images, height, width});
  for (std::size_t idx : selected) {
    DUO_REQUIRE(idx < dets.size(), "region_mask: selected index out of range");
    const Detection& d = dets[idx];
    DUO_REQUIRE(d.image < images, "region_mask: detection image index out of range");
    const Box b = d.box.clipped(static_cast<double>(width), static_cast<double>(height));
    const auto u0 = static_cast<std::size_t>(std::max(0.0, std::floor(b.u_min)));
    const auto v0 = static_cast<std::size_t>(std::max(0.0, std::floor(b.v_min)));
    const auto u1 = std::min(width, static_cast<std::size_t>(std::ceil(b.u_max)));
    const auto v1 = std::min(height, static_cast<std::size_t>(std::ceil(b.v_max)));
    double* plane = m.data() + d.image * height * width;
    for (std::size_t v = v0; v < v1; ++v)
      for (std::size_t u = u0; u < u1; ++u)
        if (b.covers_pixel(u, v)) plane[v * width + u] = std::max(plane[v * width + u], d.score);
  }
  return m;
}

namespace {

ad::Var sum_all(ad::Tape& tape, const std::vector<ad::Var>& terms) {
  ad::Var s = tape.constant(0.0);
  for (const ad::Var& t : terms) s = ad::add(s, t);
  return s;
}

}  // namespace

ObjectiveValue duo_objective(const std::vector<ad::Var>& probs, const std::vector<Detection>& dets, ad::Var depth,
                             const Tensor& intensity, EmaThreshold& ema, const AdaptConfig& cfg) {
  DUO_REQUIRE(probs.size() == dets.size(), "duo_objective: one probability vector per detection");
  ad::Tape& tape = *depth.tape;
  ObjectiveValue out;
  out.total = tape.constant(0.0);
  if (dets.empty() && (cfg.mask == MaskMode::score || !cfg.use_ncl)) {
    out.empty = true;
    return out;
  }

  std::vector<double> u;
  for (const Detection& d : dets) u.push_back(semantic_uncertainty(d.probs, cfg.focal));

  if (cfg.use_cfl && !dets.empty()) {
    std::vector<ad::Var> terms;
    for (const ad::Var& p : probs) terms.push_back(ad::conjugate_focal_loss(p, cfg.focal, cfg.cfl_gradient));
    ad::Var sem = sum_all(tape, terms);
    out.semantic = sem.value().item();
    out.total = sem;
  }

  if (cfg.use_ncl && cfg.lambda > 0) {
    const Shape& s = depth.shape();
    DUO_REQUIRE(s.size() == 2 || s.size() == 3, "duo_objective: depth must be [H,W] or [N,H,W]");
    const std::size_t n = s.size() == 3 ? s[0] : 1, h = s[s.size() - 2], w = s[s.size() - 1];
    Tensor mask;
    if (cfg.mask == MaskMode::score) {
      ema = ema_update(ema, u);
      const std::vector<std::size_t> r = select_reliable(u, ema);
      out.selected = r.size();
      mask = region_mask(dets, r, n, h, w);
    } else {
      mask = Tensor(Shape{n, h, w});
      mask.fill(1.0);
      out.selected = dets.size();
    }
    mask = mask.reshaped(s);
    Tensor weight = edge_weight(intensity);
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] *= mask[i];
    ad::Var ncl = ad::normal_consistency_loss(depth, weight);
    ad::Var reduced = cfg.pixel_reduction == PixelReduction::mean ? ad::mean(ncl) : ad::sum(ncl);
    ad::Var geo = ad::scale(reduced, cfg.lambda);
    out.geometric = geo.value().item();
    out.total = ad::add(out.total, geo);
  } else if (!cfg.use_cfl || dets.empty()) {
    out.empty = true;
  }
  return out;
}

ObjectiveValue entropy_min_objective(const std::vector<ad::Var>& probs) {
  ObjectiveValue out;
  if (probs.empty()) {
    out.empty = true;
    return out;
  }
  std::vector<ad::Var> terms;
  for (const ad::Var& p : probs) terms.push_back(ad::entropy(p));
  out.total = sum_all(*probs.front().tape, terms);
  out.semantic = out.total.value().item();
  return out;
}

ObjectiveValue depth_unc_min_objective(ad::Var z, ad::Var log_sigma) {
  ObjectiveValue out;
  out.total = ad::depth_uncertainty_min_objective(z, log_sigma);
  out.geometric = out.total.value().item();
  return out;
}

AdaptState AdaptState::create(toy::ToyDetector model, const AdaptConfig& cfg) {
  cfg.validate();
  AdaptState s{std::move(model), {}, {}, 0, cfg};
  s.ema.beta = cfg.beta;
  for (const auto& [name, t] : s.model.params) s.momentum_buffers.emplace(name, Tensor(t.shape()));
  return s;
}

namespace {

void fill_detection_metrics(StepMetrics& m, const std::vector<Detection>& dets, const FocalParams& fp) {
  m.n_dets = dets.size();
  m.mean_log_sigma.assign(toy::kNumHeads, 0.0);
  if (dets.empty()) return;
  std::vector<double> scores;
  for (const Detection& d : dets) {
    scores.push_back(d.score);
    m.mean_entropy += entropy(d.probs);
    m.mean_cfl += conjugate_focal_loss(d.probs, fp);
    for (std::size_t k = 0; k < toy::kNumHeads; ++k) m.mean_log_sigma[k] += std::log(d.heads.sigma[k]);
  }
  const double n = static_cast<double>(dets.size());
  m.mean_entropy /= n;
  m.mean_cfl /= n;
  for (double& v : m.mean_log_sigma) v /= n;
  m.score_q25 = toy::quantile(scores, 0.25);
  m.score_q50 = toy::quantile(scores, 0.50);
  m.score_q75 = toy::quantile(scores, 0.75);
}

Tensor softmax_classes(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.dim(1), g = logits.dim(2) * logits.dim(3);
  Tensor out(logits.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < g; ++i) {
      double mx = -INFINITY;
      for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, logits[(b * c + k) * g + i]);
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += std::exp(logits[(b * c + k) * g + i] - mx);
      for (std::size_t k = 0; k < c; ++k) out[(b * c + k) * g + i] = std::exp(logits[(b * c + k) * g + i] - mx) / s;
    }
  return out;
}

}  // namespace

StepResult tta_step(AdaptState& state, const Tensor& images) {
  const AdaptConfig& cfg = state.config;
  toy::ToyDetector& model = state.model;
  const toy::DetectorConfig& dc = model.cfg;

  std::function<bool(const std::string&)> trainable;
  if (cfg.adapts()) {
    if (cfg.params == ParamSubset::all)
      trainable = [](const std::string&) { return true; };
    else
      trainable = toy::is_norm_or_head_param;
  }

  ad::Tape tape;
  const toy::ParamVars p = toy::bind_params(tape, model.params, trainable);
  const toy::DenseOutputs out = toy::detector_forward(tape, model, p, images, cfg.norm_mode());

  StepResult result;
  result.detections = toy::decode(out, dc);
  const Tensor& obj = out.obj_logit.value();
  result.objectness = Tensor(Shape{obj.dim(0), obj.dim(2), obj.dim(3)});
  for (std::size_t i = 0; i < obj.size(); ++i) result.objectness[i] = 1.0 / (1.0 + std::exp(-obj[i]));
  result.class_probs = softmax_classes(out.class_logits.value());

  StepMetrics& m = result.metrics;
  m.step = state.step_count;
  m.objective = cfg.objective;
  fill_detection_metrics(m, result.detections, cfg.focal);

  const ad::Var depth = toy::fused_depth_map(out, dc);
  const Tensor intensity = luma(images);
  {
    const Tensor ncl = normal_consistency_loss(depth.value(), intensity);
    double s = 0.0;
    for (double v : ncl.values()) s += v;
    m.mean_ncl = s / static_cast<double>(ncl.size());
  }

  ++state.step_count;
  if (!cfg.adapts()) return result;

  const std::vector<Detection>& dets = result.detections;
  std::vector<ad::Var> probs;
  if (cfg.objective != Objective::depth_unc_min)
    for (const Detection& d : dets) probs.push_back(toy::joint_probs(out, d.image, d.cell));

  ObjectiveValue value;
  switch (cfg.objective) {
    case Objective::duo:
      value = duo_objective(probs, dets, depth, intensity, state.ema, cfg);
      break;
    case Objective::entropy_min:
      value = entropy_min_objective(probs);
      break;
    case Objective::depth_unc_min: {
      if (dets.empty()) {
        value.empty = true;
        break;
      }
      const std::size_t g = dc.grid_h() * dc.grid_w();
      std::vector<std::size_t> idx;
      for (const Detection& d : dets)
        for (std::size_t k = 0; k < toy::kNumHeads; ++k) idx.push_back((d.image * toy::kNumHeads + k) * g + d.cell);
      const Shape mk{dets.size(), toy::kNumHeads};
      value = depth_unc_min_objective(ad::reshape(ad::exp(ad::gather(out.head_log_z, idx)), mk),
                                      ad::reshape(ad::gather(out.head_log_sigma, idx), mk));
      break;
    }
    case Objective::none:
      break;
  }
  m.selected = value.selected;

  if (value.empty) {
    m.skipped = true;
    m.skip_reason = "no_detections";
    return result;
  }
  m.objective_value = value.total.value().item();
  const ad::GradientMap grads = tape.backward(value.total);
  TensorMap g;
  bool finite = std::isfinite(m.objective_value) && !grads.diagnostics().non_finite;
  for (const auto& [name, var] : p) {
    if (!var.requires_grad()) continue;
    Tensor t = grads.contains(var) ? grads.at(var) : Tensor(var.shape());
    for (double v : t.values()) finite = finite && std::isfinite(v);
    g.emplace(name, std::move(t));
  }
  if (!finite) {
    m.skipped = true;
    m.skip_reason = "non_finite_gradient";
    return result;
  }
  sgd_momentum_step(model.params, state.momentum_buffers, g, cfg.lr, cfg.momentum);
  if (cfg.norm_mode() == toy::NormMode::batch) toy::update_running_stats(model, out.norm_stats);
  return result;
}

}  // namespace duo
