#include "duo/toy/detector.hpp"

#include <algorithm>
#include <cmath>

#include "duo/errors.hpp"
#include "duo/geometric_loss.hpp"
#include "duo/toy/scene.hpp"

namespace duo::toy {

namespace {

struct ParamSpec {
  const char* name;
  Shape shape;
};

std::vector<ParamSpec> param_specs(const DetectorConfig& c) {
  return {{"conv1.w", {c.trunk1, 3, 4, 4}},
          {"conv1.b", {c.trunk1}},
          {"norm1.gamma", {c.trunk1}},
          {"norm1.beta", {c.trunk1}},
          {"conv2.w", {c.trunk2, c.trunk1, 3, 3}},
          {"conv2.b", {c.trunk2}},
          {"norm2.gamma", {c.trunk2}},
          {"norm2.beta", {c.trunk2}},
          {"head.w", {channel::count, c.trunk2, 5, 5}},
          {"head.b", {channel::count}},
          {"geo.log_scale", {kNumHeads - 1}}};
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

void DetectorConfig::validate() const {
  DUO_REQUIRE(cell > 0 && height % cell == 0 && width % cell == 0, "detector grid must divide the image");
  DUO_REQUIRE(cell == 8, "the trunk downsamples by exactly 8");
  DUO_REQUIRE(obj_threshold > 0 && obj_threshold < 1, "objectness threshold must be in (0,1)");
  DUO_REQUIRE(f_scale > 0 && depth_prior > 0 && height_prior > 0 && ground_ratio > 0, "detector scales must be positive");
  DUO_REQUIRE(horizon >= 0 && horizon < static_cast<double>(height), "horizon must lie inside the image");
}

ToyDetector ToyDetector::zeros(const DetectorConfig& cfg) {
  cfg.validate();
  ToyDetector d;
  d.cfg = cfg;
  for (const auto& s : param_specs(cfg)) d.params.emplace(s.name, Tensor(s.shape));
  d.buffers.emplace("norm1.mean", Tensor(Shape{cfg.trunk1}));
  d.buffers.emplace("norm1.var", Tensor(Shape{cfg.trunk1}, 1.0));
  d.buffers.emplace("norm2.mean", Tensor(Shape{cfg.trunk2}));
  d.buffers.emplace("norm2.var", Tensor(Shape{cfg.trunk2}, 1.0));
  d.buffers.emplace("geo.pixel_err", Tensor(Shape{kNumHeads - 1}, 1.0));
  return d;
}

ToyDetector ToyDetector::init(const DetectorConfig& cfg, Rng& rng) {
  ToyDetector d = zeros(cfg);
  auto he = [&](Tensor& w, double gain) {
    const double fan_in = static_cast<double>(w.size() / w.dim(0));
    const double sd = gain * std::sqrt(2.0 / fan_in);
    for (double& v : w.values()) v = rng.normal(0.0, sd);
  };
  he(d.params.at("conv1.w"), 1.0);
  he(d.params.at("conv2.w"), 1.0);
  he(d.params.at("head.w"), 0.05);
  d.params.at("norm1.gamma").fill(1.0);
  d.params.at("norm2.gamma").fill(1.0);
  d.params.at("head.b")[channel::obj] = -2.0;
  return d;
}

bool is_norm_or_head_param(const std::string& name) {
  return name.rfind("norm", 0) == 0 || name.rfind("head", 0) == 0 || name.rfind("geo", 0) == 0;
}

ParamVars bind_params(ad::Tape& tape, const ParamMap& params,
                      const std::function<bool(const std::string&)>& trainable) {
  ParamVars out;
  for (const auto& [name, t] : params)
    out.emplace(name, trainable && trainable(name) ? tape.leaf(t) : tape.constant(t));
  return out;
}

DenseOutputs detector_forward(ad::Tape& tape, const ToyDetector& det, const ParamVars& p, const Tensor& images,
                              NormMode mode) {
  const DetectorConfig& c = det.cfg;
  DUO_REQUIRE(images.rank() == 4 && images.dim(1) == 3 && images.dim(2) == c.height && images.dim(3) == c.width,
              "detector input must be [N,3," + std::to_string(c.height) + "," + std::to_string(c.width) + "], got " +
                  shape_string(images.shape()));
  DenseOutputs out;
  auto norm = [&](ad::Var x, const std::string& prefix) {
    if (mode == NormMode::batch) {
      ad::BatchStats st;
      ad::Var y = ad::batch_norm_train(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"), c.norm_eps, &st);
      out.norm_stats.push_back(std::move(st));
      return y;
    }
    return ad::batch_norm_eval(x, p.at(prefix + ".gamma"), p.at(prefix + ".beta"), det.buffers.at(prefix + ".mean"),
                               det.buffers.at(prefix + ".var"), c.norm_eps);
  };

  ad::Var x = tape.constant(images);
  ad::Var h = ad::conv2d(x, p.at("conv1.w"), p.at("conv1.b"), 2, 1);
  h = ad::relu(norm(h, "norm1"));
  h = ad::apply_map(h, ad::make_avg_pool(c.height / 2, c.width / 2, 2));
  h = ad::conv2d(h, p.at("conv2.w"), p.at("conv2.b"), 1, 1);
  h = ad::relu(norm(h, "norm2"));
  h = ad::apply_map(h, ad::make_avg_pool(c.height / 4, c.width / 4, 2));
  ad::Var raw = ad::conv2d(h, p.at("head.w"), p.at("head.b"), 1, 2);

  const double log_hp = std::log(c.height_prior), log_dp = std::log(c.depth_prior), log_f = std::log(c.f_scale);
  out.class_logits = ad::slice_channels(raw, channel::cls, channel::cls + kNumClasses);
  out.obj_logit = ad::slice_channels(raw, channel::obj, channel::obj + 1);
  out.offset = ad::slice_channels(raw, channel::dx, channel::dy + 1);
  out.log_box = ad::add(ad::slice_channels(raw, channel::log_h, channel::log_w + 1), log_hp);
  out.contact = ad::slice_channels(raw, channel::contact, channel::contact + 1);
  out.dense_log_depth = ad::add(ad::slice_channels(raw, channel::dense_depth, channel::dense_depth + 1), log_dp);

  const Shape plane{images.dim(0), 1, c.grid_h(), c.grid_w()};
  ad::Var reg = ad::add(ad::slice_channels(raw, channel::reg_depth, channel::reg_depth + 1), log_dp);
  ad::Var box_h = ad::slice_channels(out.log_box, 0, 1);
  auto geo_z = [&](ad::Var log_length, std::size_t k) {
    ad::Var s = ad::expand(ad::gather(p.at("geo.log_scale"), {k}), plane);
    return ad::sub(ad::add(s, log_f), ad::stop_gradient(log_length));
  };
  const Tensor& pixel_err = det.buffers.at("geo.pixel_err");
  auto geo_sigma = [&](ad::Var log_z, ad::Var log_length, std::size_t k) {
    return ad::sub(ad::add(log_z, std::log(pixel_err[k])), ad::stop_gradient(log_length));
  };
  Tensor row_centre(plane);
  for (std::size_t i = 0; i < row_centre.size(); ++i)
    row_centre[i] = (static_cast<double>((i / c.grid_w()) % c.grid_h()) + 0.5) * static_cast<double>(c.cell);
  ad::Var contact_row = ad::add(tape.constant(row_centre), ad::scale(out.contact, static_cast<double>(c.cell)));
  ad::Var log_contact = ad::log(ad::clamp_min(ad::add(contact_row, -c.horizon), 1.0));
  ad::Var z1 = geo_z(box_h, 0), z2 = ad::add(geo_z(log_contact, 1), std::log(c.ground_ratio));
  out.head_log_z = ad::concat_channels({reg, z1, z2});
  out.geo_log_length = ad::stop_gradient(ad::concat_channels({box_h, log_contact}));
  out.head_log_sigma =
      ad::concat_channels({ad::slice_channels(raw, channel::reg_log_sigma, channel::reg_log_sigma + 1),
                           geo_sigma(z1, box_h, 0), geo_sigma(z2, log_contact, 1)});
  return out;
}

std::vector<Detection> decode(const DenseOutputs& out, const DetectorConfig& cfg) {
  const Tensor& cls = out.class_logits.value();
  const Tensor& obj = out.obj_logit.value();
  const Tensor& off = out.offset.value();
  const Tensor& box = out.log_box.value();
  const Tensor& lz = out.head_log_z.value();
  const Tensor& ls = out.head_log_sigma.value();
  const std::size_t n = obj.dim(0), gh = cfg.grid_h(), gw = cfg.grid_w(), g = gh * gw;
  const double cell = static_cast<double>(cfg.cell);
  std::vector<Detection> dets;
  for (std::size_t b = 0; b < n; ++b) {
    const double* o = obj.data() + b * g;
    for (std::size_t r = 0; r < gh; ++r)
      for (std::size_t cc = 0; cc < gw; ++cc) {
        const std::size_t i = r * gw + cc;
        const double ob = sigmoid(o[i]);
        if (ob < cfg.obj_threshold) continue;
        bool peak = true;
        for (long dr = -1; dr <= 1 && peak; ++dr)
          for (long dc = -1; dc <= 1; ++dc) {
            const long rr = static_cast<long>(r) + dr, c2 = static_cast<long>(cc) + dc;
            if ((dr == 0 && dc == 0) || rr < 0 || c2 < 0 || rr >= static_cast<long>(gh) || c2 >= static_cast<long>(gw))
              continue;
            if (o[rr * static_cast<long>(gw) + c2] > o[i]) {
              peak = false;
              break;
            }
          }
        if (!peak) continue;

        std::vector<double> joint(kNumClasses + 1);
        double mx = -INFINITY;
        for (std::size_t k = 0; k < kNumClasses; ++k) mx = std::max(mx, cls[(b * kNumClasses + k) * g + i]);
        double s = 0.0;
        for (std::size_t k = 0; k < kNumClasses; ++k) s += std::exp(cls[(b * kNumClasses + k) * g + i] - mx);
        joint[0] = 1.0 - ob;
        std::size_t best = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          joint[k + 1] = ob * std::exp(cls[(b * kNumClasses + k) * g + i] - mx) / s;
          if (joint[k + 1] > joint[best + 1]) best = k;
        }
        ProbVector probs = ProbVector::from_values(joint);

        const double cu = (static_cast<double>(cc) + 0.5 + off[(b * 2) * g + i]) * cell;
        const double cv = (static_cast<double>(r) + 0.5 + off[(b * 2 + 1) * g + i]) * cell;
        const double bh = std::exp(box[(b * 2) * g + i]), bw = std::exp(box[(b * 2 + 1) * g + i]);
        Box bx = Box{cu - 0.5 * bw, cv - 0.5 * bh, cu + 0.5 * bw, cv + 0.5 * bh}.clipped(
            static_cast<double>(cfg.width), static_cast<double>(cfg.height));

        HeadSet hs;
        for (std::size_t k = 0; k < kNumHeads; ++k) {
          hs.z.push_back(std::exp(lz[(b * kNumHeads + k) * g + i]));
          hs.sigma.push_back(std::exp(ls[(b * kNumHeads + k) * g + i]));
        }
        const double depth = fuse_depth(hs);
        const double score = probs[best + 1];
        dets.push_back(Detection{bx, std::move(probs), score, best, std::move(hs), depth, b, i});
      }
  }
  return dets;
}

ad::Var joint_probs(const DenseOutputs& out, std::size_t image, std::size_t cell) {
  const Shape& s = out.class_logits.shape();
  const std::size_t g = s[2] * s[3];
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < kNumClasses; ++k) idx.push_back((image * kNumClasses + k) * g + cell);
  ad::Var lsm = ad::log_softmax(ad::gather(out.class_logits, idx));
  ad::Var o = ad::gather(out.obj_logit, {image * g + cell});
  ad::Var fg = ad::add(lsm, ad::expand(o, {kNumClasses}));
  ad::Var joint = ad::concat({out.obj_logit.tape->constant(Tensor::vector({0.0})), fg});
  return ad::prob_vector(joint);
}

ad::Var dense_depth_map(const DenseOutputs& out, const DetectorConfig& cfg) {
  const Shape& s = out.dense_log_depth.shape();
  ad::Var d = ad::reshape(ad::exp(out.dense_log_depth), {s[0], s[2], s[3]});
  return ad::bilinear_upsample(d, cfg.height, cfg.width);
}

ad::Var fused_depth_map(const DenseOutputs& out, const DetectorConfig& cfg) {
  ad::Var num, den;
  for (std::size_t k = 0; k < kNumHeads; ++k) {
    ad::Var w = ad::exp(ad::neg(ad::slice_channels(out.head_log_sigma, k, k + 1)));
    ad::Var zw = ad::mul(ad::exp(ad::slice_channels(out.head_log_z, k, k + 1)), w);
    num = k == 0 ? zw : ad::add(num, zw);
    den = k == 0 ? w : ad::add(den, w);
  }
  const Shape& s = num.shape();
  ad::Var d = ad::reshape(ad::div(num, den), {s[0], s[2], s[3]});
  return ad::bilinear_upsample(d, cfg.height, cfg.width);
}

DetectorResult run_detector(const ToyDetector& det, const Tensor& images, NormMode mode) {
  ad::Tape tape;
  const ParamVars p = bind_params(tape, det.params, nullptr);
  DenseOutputs out = detector_forward(tape, det, p, images, mode);
  DetectorResult r;
  r.detections = decode(out, det.cfg);
  const Tensor& o = out.obj_logit.value();
  r.objectness = Tensor(Shape{o.dim(0), o.dim(2), o.dim(3)});
  for (std::size_t i = 0; i < o.size(); ++i) r.objectness[i] = sigmoid(o[i]);
  r.dense_depth = dense_depth_map(out, det.cfg).value();
  return r;
}

void update_running_stats(ToyDetector& det, const std::vector<ad::BatchStats>& stats) {
  DUO_REQUIRE(stats.size() == 2, "expected statistics for both normalisation layers");
  const double m = det.cfg.norm_momentum;
  for (std::size_t l = 0; l < 2; ++l) {
    const std::string prefix = "norm" + std::to_string(l + 1);
    Tensor& mean = det.buffers.at(prefix + ".mean");
    Tensor& var = det.buffers.at(prefix + ".var");
    for (std::size_t i = 0; i < mean.size(); ++i) {
      mean[i] = (1 - m) * mean[i] + m * stats[l].mean[i];
      var[i] = (1 - m) * var[i] + m * stats[l].var[i];
    }
  }
}

void update_pixel_error(ToyDetector& det, std::span<const double> batch_pixel_err) {
  Tensor& e = det.buffers.at("geo.pixel_err");
  DUO_REQUIRE(batch_pixel_err.size() == e.size(), "one pixel error per geometric head");
  const double m = det.cfg.norm_momentum;
  for (std::size_t k = 0; k < e.size(); ++k) {
    DUO_REQUIRE(std::isfinite(batch_pixel_err[k]) && batch_pixel_err[k] > 0, "pixel error must be positive");
    e[k] = (1 - m) * e[k] + m * batch_pixel_err[k];
  }
}

}  // namespace duo::toy
