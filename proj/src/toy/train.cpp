#include "duo/toy/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "duo/depth_fusion.hpp"
#include "duo/errors.hpp"
#include "duo/optim.hpp"
#include "duo/tensor_io.hpp"

namespace duo::toy {

void TrainConfig::validate() const {
  DUO_REQUIRE(steps >= 0 && batch_size > 0, "training needs a positive batch size");
  DUO_REQUIRE(lr > 0 && momentum >= 0 && momentum < 1, "invalid optimiser settings");
  focal.validate();
  scene.validate();
  detector.validate();
  DUO_REQUIRE(scene.height == detector.height && scene.width == detector.width, "scene and detector sizes differ");
  DUO_REQUIRE(static_cast<double>(scene.horizon) == detector.horizon && scene.ground_ratio == detector.ground_ratio &&
                  scene.f_scale == detector.f_scale,
              "scene and detector geometry differ");
}

std::string TrainConfig::fingerprint() const {
  std::ostringstream os;
  os << std::setprecision(17) << "seed=" << seed << ";steps=" << steps << ";batch=" << batch_size << ";lr=" << lr
     << ";momentum=" << momentum << ";clip=" << grad_clip << ";alpha=" << focal.alpha << ";gamma=" << focal.gamma
     << ";pos_w=" << obj_pos_weight << ";depth_w=" << depth_weight << ";scene=" << scene.height << "x" << scene.width
     << "," << scene.min_objects << "-" << scene.max_objects << "," << scene.f_scale << "," << scene.horizon << ","
     << scene.min_box_height << "-" << scene.max_box_height << "," << scene.ground_ratio << "," << scene.far_depth
     << ";det=" << detector.trunk1 << "," << detector.trunk2 << "," << detector.obj_threshold << ","
     << detector.horizon << "," << detector.ground_ratio << "," << channel::count;
  return os.str();
}

CellTargets assign_cells(const Scene& scene, const DetectorConfig& cfg) {
  CellTargets t;
  const double cell = static_cast<double>(cfg.cell);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const Box& b = scene.objects[i].box;
    const auto c = std::min(static_cast<std::size_t>(b.center_u() / cell), cfg.grid_w() - 1);
    const auto r = std::min(static_cast<std::size_t>(b.center_v() / cell), cfg.grid_h() - 1);
    t.cells.push_back(r * cfg.grid_w() + c);
    t.objects.push_back(i);
  }
  t.geo_cells = t.cells;
  t.geo_objects = t.objects;
  for (std::size_t r = 0; r < cfg.grid_h(); ++r)
    for (std::size_t c = 0; c < cfg.grid_w(); ++c) {
      const std::size_t flat = r * cfg.grid_w() + c;
      if (std::find(t.cells.begin(), t.cells.end(), flat) != t.cells.end()) continue;
      const double u = (static_cast<double>(c) + 0.5) * cell, v = (static_cast<double>(r) + 0.5) * cell;
      std::size_t best = scene.objects.size();
      for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        const Box& b = scene.objects[i].box;
        if (u < b.u_min || u >= b.u_max || v < b.v_min || v >= b.v_max) continue;
        if (best == scene.objects.size() || scene.objects[i].depth < scene.objects[best].depth) best = i;
      }
      if (best < scene.objects.size()) {
        t.geo_cells.push_back(flat);
        t.geo_objects.push_back(best);
      }
    }
  return t;
}

std::vector<Scene> training_batch(const TrainConfig& cfg, int step) {
  Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(step));
  std::vector<Scene> batch;
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    Rng scene_rng = rng.fork(i);
    batch.push_back(generate_scene(scene_rng, cfg.scene));
  }
  return batch;
}

Tensor stack_images(const std::vector<Tensor>& images) {
  DUO_REQUIRE(!images.empty(), "cannot stack an empty batch");
  const Shape& s = images.front().shape();
  Tensor out(Shape{images.size(), s[0], s[1], s[2]});
  const std::size_t n = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    DUO_REQUIRE(images[i].shape() == s, "images in a batch must share a shape");
    std::copy(images[i].values().begin(), images[i].values().end(), out.values().begin() + static_cast<long>(i * n));
  }
  return out;
}

Tensor stack_images(const std::vector<Scene>& scenes) {
  std::vector<Tensor> images;
  for (const Scene& s : scenes) images.push_back(s.image);
  return stack_images(images);
}

namespace {

struct LossParts {
  ad::Var total;
  TrainLogEntry values;
  std::vector<double> pixel_err;  // batch estimate per geometric head, empty without objects
};

LossParts supervised_loss(ad::Tape& tape, const DenseOutputs& out, const std::vector<Scene>& scenes,
                          const TrainConfig& cfg) {
  const DetectorConfig& dc = cfg.detector;
  const std::size_t n = scenes.size(), g = dc.grid_h() * dc.grid_w();

  Tensor obj_target(Shape{n, 1, dc.grid_h(), dc.grid_w()});
  std::vector<std::size_t> cls_idx, off_idx[2], box_idx[2], contact_idx, z_idx, s_idx;
  std::vector<double> off_t[2], log_h_t, log_w_t, contact_t, depth_t;
  std::vector<std::size_t> targets_cls;
  for (std::size_t b = 0; b < n; ++b) {
    const CellTargets ct = assign_cells(scenes[b], dc);
    for (std::size_t j = 0; j < ct.cells.size(); ++j) {
      const std::size_t cell = ct.cells[j];
      const GtObject& o = scenes[b].objects[ct.objects[j]];
      obj_target[b * g + cell] = 1.0;
      for (std::size_t k = 0; k < kNumClasses; ++k) cls_idx.push_back((b * kNumClasses + k) * g + cell);
      targets_cls.push_back(o.cls);
      const double r = static_cast<double>(cell / dc.grid_w()), c = static_cast<double>(cell % dc.grid_w());
      const double cs = static_cast<double>(dc.cell);
      off_t[0].push_back(o.box.center_u() / cs - c - 0.5);
      off_t[1].push_back(o.box.center_v() / cs - r - 0.5);
      for (std::size_t a = 0; a < 2; ++a) off_idx[a].push_back((b * 2 + a) * g + cell);
    }
    for (std::size_t j = 0; j < ct.geo_cells.size(); ++j) {
      const std::size_t cell = ct.geo_cells[j];
      const GtObject& o = scenes[b].objects[ct.geo_objects[j]];
      for (std::size_t a = 0; a < 2; ++a) box_idx[a].push_back((b * 2 + a) * g + cell);
      log_h_t.push_back(std::log(o.box.height()));
      log_w_t.push_back(std::log(o.box.width()));
      contact_idx.push_back(b * g + cell);
      contact_t.push_back(o.box.v_max / static_cast<double>(dc.cell) - static_cast<double>(cell / dc.grid_w()) - 0.5);
      for (std::size_t k = 0; k < kNumHeads; ++k) {
        z_idx.push_back((b * kNumHeads + k) * g + cell);
        s_idx.push_back((b * kNumHeads + k) * g + cell);
      }
      depth_t.push_back(o.depth);
    }
  }
  const std::size_t m = targets_cls.size();
  const std::size_t mg = depth_t.size();
  const double inv_m = 1.0 / static_cast<double>(std::max<std::size_t>(m, 1));
  const double inv_mg = 1.0 / static_cast<double>(std::max<std::size_t>(mg, 1));

  // Class focal loss at responsible cells.
  ad::Var focal = tape.constant(0.0);
  for (std::size_t j = 0; j < m; ++j) {
    ad::Var logits = ad::gather(out.class_logits, {cls_idx[3 * j], cls_idx[3 * j + 1], cls_idx[3 * j + 2]});
    focal = ad::add(focal, ad::focal_loss(logits, targets_cls[j], cfg.focal));
  }
  focal = ad::scale(focal, inv_m);

  // Weighted binary cross-entropy on objectness over every cell.
  ad::Var y = tape.constant(obj_target);
  Tensor neg_t = obj_target;
  for (double& v : neg_t.values()) v = 1.0 - v;
  ad::Var log_p = ad::log(ad::clamp_min(ad::sigmoid(out.obj_logit), 1e-12));
  ad::Var log_q = ad::log(ad::clamp_min(ad::sigmoid(ad::neg(out.obj_logit)), 1e-12));
  ad::Var bce = ad::add(ad::scale(ad::sum(ad::mul(y, log_p)), cfg.obj_pos_weight),
                        ad::sum(ad::mul(tape.constant(neg_t), log_q)));
  ad::Var objectness = ad::scale(bce, -1.0 / static_cast<double>(n * g) * 10.0);

  // Box geometry (L1).
  auto l1 = [&](ad::Var src, const std::vector<std::size_t>& idx, const std::vector<double>& target) {
    return ad::sum(ad::abs(ad::sub(ad::gather(src, idx), tape.constant(Tensor::vector(target)))));
  };
  ad::Var box = tape.constant(0.0);
  if (m > 0) {
    box = ad::scale(ad::add(l1(out.offset, off_idx[0], off_t[0]), l1(out.offset, off_idx[1], off_t[1])), inv_m);
    ad::Var size = ad::add(l1(out.log_box, box_idx[0], log_h_t), l1(out.log_box, box_idx[1], log_w_t));
    size = ad::add(size, l1(out.contact, contact_idx, contact_t));
    box = ad::add(box, ad::scale(size, inv_mg));
  }

  // Depth heads with the true depth as target.
  ad::Var heads = tape.constant(0.0);
  if (m > 0) {
    ad::Var z = ad::reshape(ad::exp(ad::gather(out.head_log_z, z_idx)), {mg, kNumHeads});
    ad::Var ls = ad::reshape(ad::gather(out.head_log_sigma, s_idx), {mg, kNumHeads});
    heads = ad::scale(ad::uncertainty_regression_loss(z, ls, tape.constant(Tensor::vector(depth_t))),
                      cfg.depth_weight * inv_mg);
  }

  // Dense depth, L1 in log space at image resolution.
  Tensor log_gt(Shape{n, dc.height, dc.width});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < dc.height * dc.width; ++i)
      log_gt[b * dc.height * dc.width + i] = std::log(scenes[b].depth[i]);
  ad::Var dense = ad::mean(ad::abs(ad::sub(ad::log(dense_depth_map(out, dc)), tape.constant(log_gt))));

  LossParts parts;
  if (mg > 0) {
    const Tensor& lz = out.head_log_z.value();
    const Tensor& ll = out.geo_log_length.value();
    parts.pixel_err.assign(kNumHeads - 1, 0.0);
    for (std::size_t j = 0; j < mg; ++j) {
      const std::size_t b = z_idx[j * kNumHeads] / (kNumHeads * g), cell = z_idx[j * kNumHeads] % g;
      for (std::size_t k = 1; k < kNumHeads; ++k) {
        const double z = std::exp(lz[(b * kNumHeads + k) * g + cell]);
        const double len = std::exp(ll[(b * (kNumHeads - 1) + k - 1) * g + cell]);
        parts.pixel_err[k - 1] += std::abs(z - depth_t[j]) * len / z / static_cast<double>(mg);
      }
    }
  }
  parts.total = ad::add(ad::add(ad::add(focal, objectness), ad::add(box, heads)), dense);
  parts.values.focal = focal.value().item();
  parts.values.objectness = objectness.value().item();
  parts.values.box = box.value().item();
  parts.values.depth_heads = heads.value().item();
  parts.values.dense = dense.value().item();
  parts.values.total = parts.total.value().item();
  return parts;
}

}  // namespace

TrainResult source_train(const TrainConfig& cfg) {
  cfg.validate();
  Rng init_rng = Rng(cfg.seed).fork(0xD37EC7);
  TrainResult result{ToyDetector::init(cfg.detector, init_rng), {}};
  ToyDetector& det = result.detector;
  TensorMap velocity;
  for (int step = 0; step < cfg.steps; ++step) {
    const std::vector<Scene> scenes = training_batch(cfg, step);
    ad::Tape tape;
    const ParamVars p = bind_params(tape, det.params, [](const std::string&) { return true; });
    DenseOutputs out = detector_forward(tape, det, p, stack_images(scenes), NormMode::batch);
    LossParts loss = supervised_loss(tape, out, scenes, cfg);
    if (!std::isfinite(loss.values.total))
      throw NonFiniteError("source training diverged at step " + std::to_string(step));
    ad::GradientMap grads = tape.backward(loss.total);
    if (grads.diagnostics().non_finite)
      throw NonFiniteError("non-finite gradient during source training at step " + std::to_string(step));
    TensorMap g;
    for (const auto& [name, var] : p) g.emplace(name, grads.at(var));
    const double norm = global_norm(g);
    if (norm > cfg.grad_clip)
      for (auto& [name, t] : g) t *= cfg.grad_clip / norm;
    // Step decay at two thirds and nine tenths of the schedule.
    double lr = cfg.lr;
    if (step >= cfg.steps * 2 / 3) lr *= 0.1;
    if (step >= cfg.steps * 9 / 10) lr *= 0.1;
    sgd_momentum_step(det.params, velocity, g, lr, cfg.momentum);
    update_running_stats(det, out.norm_stats);
    if (!loss.pixel_err.empty()) update_pixel_error(det, loss.pixel_err);
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
      loss.values.step = step;
      result.log.push_back(loss.values);
    }
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const ToyDetector& det) {
  TensorBundle bundle;
  for (const auto& [name, t] : det.params) bundle.emplace("param/" + name, t);
  for (const auto& [name, t] : det.buffers) bundle.emplace("buffer/" + name, t);
  save_bundle(path, bundle);
}

ToyDetector load_checkpoint(const std::filesystem::path& path, const DetectorConfig& cfg) {
  if (!std::filesystem::exists(path)) throw FormatError("checkpoint not found: " + path.string());
  const TensorBundle bundle = load_bundle(path);
  ToyDetector det = ToyDetector::zeros(cfg);
  auto fill = [&](ParamMap& into, const std::string& prefix) {
    for (auto& [name, t] : into) {
      auto it = bundle.find(prefix + name);
      if (it == bundle.end()) throw FormatError("checkpoint is missing " + prefix + name);
      if (it->second.shape() != t.shape())
        throw FormatError("checkpoint tensor " + prefix + name + " has shape " + shape_string(it->second.shape()));
      t = it->second;
    }
  };
  fill(det.params, "param/");
  fill(det.buffers, "buffer/");
  return det;
}

}  // namespace duo::toy
