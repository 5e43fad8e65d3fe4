#include "duo/toy/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "duo/errors.hpp"
#include "duo/nn_ops.hpp"

namespace duo::toy {

namespace {

constexpr std::size_t kCell = 8;

struct ClassStyle {
  double aspect_lo, aspect_hi;
  std::array<double, 3> color;
};

constexpr ClassStyle kStyles[kNumClasses] = {
    {1.4, 1.7, {0.85, 0.25, 0.20}},   // car: wide, red
    {0.40, 0.55, {0.25, 0.75, 0.30}},  // pedestrian: narrow, green
    {0.80, 1.00, {0.30, 0.35, 0.85}},  // cyclist: square, blue
};

// Smooth random field in [0, 1] from a coarse grid, bilinearly resampled.
Tensor value_noise(Rng& rng, std::size_t gh, std::size_t gw, std::size_t h, std::size_t w) {
  Tensor coarse(Shape{gh, gw});
  for (double& v : coarse.values()) v = rng.uniform();
  return ad::make_bilinear(gh, gw, h, w)->apply(coarse);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

void SceneConfig::validate() const {
  DUO_REQUIRE(height % kCell == 0 && width % kCell == 0, "scene size must be a multiple of the cell size");
  DUO_REQUIRE(min_objects >= 0 && min_objects <= max_objects, "object count range invalid");
  DUO_REQUIRE(min_box_height >= 4 && min_box_height <= max_box_height, "box height range invalid");
  DUO_REQUIRE(f_scale > 0 && far_depth > 0 && ground_ratio > 0, "scene scales must be positive");
  DUO_REQUIRE(horizon > 0 && horizon < height, "horizon must lie inside the image");
  DUO_REQUIRE(static_cast<double>(horizon) + (ground_ratio) * max_box_height + 1 < static_cast<double>(height),
              "largest object would leave the image");
}

double depth_from_height(double box_height, const SceneConfig& cfg) {
  DUO_REQUIRE(box_height > 0, "box height must be positive");
  return cfg.f_scale / box_height;
}

Scene generate_scene(Rng& rng, const SceneConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.height, w = cfg.width, plane = h * w;
  Scene scene;
  scene.seed = rng.seed();
  scene.image = Tensor(Shape{3, h, w});
  scene.depth = Tensor(Shape{h, w});

  // Background: sky above the horizon, textured ground below.
  const Tensor clouds = value_noise(rng, 4, 6, h, w);
  const Tensor grit = value_noise(rng, 9, 13, h, w);
  const double light = rng.uniform(-0.05, 0.05);
  const std::array<double, 3> sky_top{0.45, 0.60, 0.85}, sky_low{0.75, 0.82, 0.90}, ground{0.42, 0.40, 0.36};
  const double hz = static_cast<double>(cfg.horizon);
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < w; ++u) {
      const std::size_t i = v * w + u;
      if (v < cfg.horizon) {
        const double t = static_cast<double>(v) / hz;
        for (std::size_t c = 0; c < 3; ++c)
          scene.image[c * plane + i] = sky_top[c] + t * (sky_low[c] - sky_top[c]) + 0.12 * (clouds[i] - 0.5) + light;
        scene.depth[i] = cfg.far_depth;
      } else {
        const double t = (static_cast<double>(v) - hz) / (static_cast<double>(h) - hz);
        for (std::size_t c = 0; c < 3; ++c)
          scene.image[c * plane + i] = ground[c] - 0.1 * t + 0.16 * (grit[i] - 0.5) + light;
        const double row = static_cast<double>(v) + 0.5 - hz;
        scene.depth[i] = std::min(cfg.far_depth, cfg.f_scale * cfg.ground_ratio / row);
      }
    }
  }

  // Objects, placed without sharing or neighbouring a detector cell.
  const int target = rng.uniform_int(cfg.min_objects, cfg.max_objects);
  for (int attempt = 0; attempt < 200 && static_cast<int>(scene.objects.size()) < target; ++attempt) {
    const std::size_t cls = static_cast<std::size_t>(rng.uniform_int(0, kNumClasses - 1));
    const ClassStyle& st = kStyles[cls];
    const int bh = rng.uniform_int(cfg.min_box_height, cfg.max_box_height);
    const int bw = std::max(3, static_cast<int>(std::lround(rng.uniform(st.aspect_lo, st.aspect_hi) * bh)));
    if (bw > static_cast<int>(w)) continue;
    const int jitter = rng.uniform_int(-1, 1);
    const int bottom = static_cast<int>(std::lround(hz + cfg.ground_ratio * bh)) + jitter;
    const int top = bottom - bh;
    const int left = rng.uniform_int(0, static_cast<int>(w) - bw);
    Box b{static_cast<double>(left), static_cast<double>(top), static_cast<double>(left + bw),
          static_cast<double>(bottom)};
    const long cu = static_cast<long>(b.center_u() / kCell), cv = static_cast<long>(b.center_v() / kCell);
    bool ok = true;
    for (const GtObject& o : scene.objects) {
      const long ou = static_cast<long>(o.box.center_u() / kCell), ov = static_cast<long>(o.box.center_v() / kCell);
      if (std::max(std::abs(ou - cu), std::abs(ov - cv)) < 2) ok = false;
      const double iw = std::min(b.u_max, o.box.u_max) - std::max(b.u_min, o.box.u_min);
      const double ih = std::min(b.v_max, o.box.v_max) - std::max(b.v_min, o.box.v_min);
      if (iw > 0 && ih > 0) {
        const double smaller = std::min(b.width() * b.height(), o.box.width() * o.box.height());
        if (iw * ih > 0.25 * smaller) ok = false;
      }
    }
    if (!ok) continue;
    scene.objects.push_back({b, cls, depth_from_height(bh, cfg)});
  }

  // Paint far to near so nearer objects occlude.
  std::vector<std::size_t> order(scene.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scene.objects[a].depth > scene.objects[b].depth; });
  for (std::size_t idx : order) {
    const GtObject& o = scene.objects[idx];
    const ClassStyle& st = kStyles[o.cls];
    std::array<double, 3> col;
    for (std::size_t c = 0; c < 3; ++c) col[c] = st.color[c] + rng.uniform(-0.08, 0.08);
    const auto u0 = static_cast<std::size_t>(o.box.u_min), u1 = static_cast<std::size_t>(o.box.u_max);
    const auto v0 = static_cast<std::size_t>(o.box.v_min), v1 = static_cast<std::size_t>(o.box.v_max);
    for (std::size_t v = v0; v < v1; ++v) {
      const double shade = 0.12 * (0.5 - static_cast<double>(v - v0) / static_cast<double>(v1 - v0));
      for (std::size_t u = u0; u < u1; ++u) {
        const bool rim = v == v0 || v + 1 == v1 || u == u0 || u + 1 == u1;
        const std::size_t i = v * w + u;
        for (std::size_t c = 0; c < 3; ++c) scene.image[c * plane + i] = rim ? 0.5 * col[c] : col[c] + shade + light;
        scene.depth[i] = o.depth;
      }
    }
  }
  for (double& v : scene.image.values()) v = clamp01(v);
  return scene;
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::shot_noise: return "shot_noise";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::pixelate: return "pixelate";
    case CorruptionKind::fog_haze: return "fog_haze";
  }
  return "unknown";
}

CorruptionKind parse_corruption(std::string_view name) {
  for (CorruptionKind k : kAllCorruptions)
    if (to_string(k) == name) return k;
  throw ContractViolation("unknown corruption kind '" + std::string(name) + "'");
}

double corruption_parameter(CorruptionKind kind, int severity) {
  DUO_REQUIRE(severity >= 1 && severity <= 5, "corruption severity must be in 1..5");
  static constexpr double gaussian[] = {0.04, 0.08, 0.12, 0.18, 0.26};
  static constexpr double shot[] = {60, 25, 12, 5, 3};
  static constexpr double bright[] = {0.1, 0.2, 0.3, 0.4, 0.5};
  static constexpr double contrast[] = {0.4, 0.3, 0.2, 0.1, 0.05};
  static constexpr double pixel[] = {2, 3, 4, 5, 6};
  static constexpr double fog[] = {0.3, 0.45, 0.6, 0.7, 0.8};
  const auto s = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::gaussian_noise: return gaussian[s];
    case CorruptionKind::shot_noise: return shot[s];
    case CorruptionKind::brightness: return bright[s];
    case CorruptionKind::contrast: return contrast[s];
    case CorruptionKind::pixelate: return pixel[s];
    case CorruptionKind::fog_haze: return fog[s];
  }
  throw ContractViolation("unknown corruption kind");
}

Tensor corrupt(const Tensor& image, const Corruption& c, Rng& rng) {
  DUO_REQUIRE(image.rank() == 3 && image.dim(0) == 3, "corrupt expects a [3,H,W] image");
  const double p = corruption_parameter(c.kind, c.severity);
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  Tensor out = image;
  switch (c.kind) {
    case CorruptionKind::gaussian_noise:
      for (double& v : out.values()) v += rng.normal(0.0, p);
      break;
    case CorruptionKind::shot_noise:
      for (double& v : out.values()) v = rng.poisson(std::max(v, 0.0) * p) / p;
      break;
    case CorruptionKind::brightness:
      for (double& v : out.values()) v += p;
      break;
    case CorruptionKind::contrast: {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += image[ch * plane + i];
        mean /= static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = (image[ch * plane + i] - mean) * p + mean;
      }
      break;
    }
    case CorruptionKind::pixelate: {
      const auto k = static_cast<std::size_t>(p);
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t v0 = 0; v0 < h; v0 += k)
          for (std::size_t u0 = 0; u0 < w; u0 += k) {
            const std::size_t v1 = std::min(h, v0 + k), u1 = std::min(w, u0 + k);
            double s = 0.0;
            for (std::size_t v = v0; v < v1; ++v)
              for (std::size_t u = u0; u < u1; ++u) s += image[ch * plane + v * w + u];
            s /= static_cast<double>((v1 - v0) * (u1 - u0));
            for (std::size_t v = v0; v < v1; ++v)
              for (std::size_t u = u0; u < u1; ++u) out[ch * plane + v * w + u] = s;
          }
      break;
    }
    case CorruptionKind::fog_haze: {
      const Tensor density = value_noise(rng, 4, 6, h, w);
      for (std::size_t i = 0; i < plane; ++i) {
        const double t = 1.0 - p * (0.6 + 0.4 * density[i]);
        for (std::size_t ch = 0; ch < 3; ++ch) out[ch * plane + i] = image[ch * plane + i] * t + 0.8 * (1.0 - t);
      }
      break;
    }
  }
  for (double& v : out.values()) v = clamp01(v);
  return out;
}

}  // namespace duo::toy
