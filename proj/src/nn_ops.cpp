#include "duo/nn_ops.hpp"

#include <algorithm>
#include <cmath>

#include "duo/errors.hpp"

namespace duo::ad {

Tensor PlaneMap::apply(const Tensor& x) const {
  DUO_REQUIRE(x.rank() >= 2 && x.dim(x.rank() - 2) == in_h && x.dim(x.rank() - 1) == in_w,
              "plane map input shape " + shape_string(x.shape()));
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape[out_shape.size() - 1] = out_w;
  Tensor y(out_shape);
  const std::size_t in_plane = in_h * in_w, out_plane = out_h * out_w;
  const std::size_t planes = x.size() / in_plane;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * in_plane;
    double* dst = y.data() + p * out_plane;
    for (std::size_t r = 0; r < out_plane; ++r) {
      double s = 0.0;
      for (std::size_t k = row_start[r]; k < row_start[r + 1]; ++k) s += weight[k] * src[col[k]];
      dst[r] = s;
    }
  }
  return y;
}

void PlaneMap::apply_transpose_add(const Tensor& g, Tensor& gx) const {
  const std::size_t in_plane = in_h * in_w, out_plane = out_h * out_w;
  const std::size_t planes = g.size() / out_plane;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = g.data() + p * out_plane;
    double* dst = gx.data() + p * in_plane;
    for (std::size_t r = 0; r < out_plane; ++r) {
      const double gr = src[r];
      for (std::size_t k = row_start[r]; k < row_start[r + 1]; ++k) dst[col[k]] += weight[k] * gr;
    }
  }
}

namespace {

std::size_t clamp_index(long v, std::size_t n) {
  if (v < 0) return 0;
  if (v >= static_cast<long>(n)) return n - 1;
  return static_cast<std::size_t>(v);
}

// Builds a map where each output pixel lists (input index, weight) taps;
// repeated inputs are merged so replicate padding stays a proper linear map.
class MapBuilder {
 public:
  MapBuilder(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
    m_.in_h = in_h;
    m_.in_w = in_w;
    m_.out_h = out_h;
    m_.out_w = out_w;
    m_.row_start.push_back(0);
  }
  void tap(std::size_t idx, double w) {
    if (w == 0.0) return;
    for (std::size_t k = m_.row_start.back(); k < m_.col.size(); ++k)
      if (m_.col[k] == idx) {
        m_.weight[k] += w;
        return;
      }
    m_.col.push_back(static_cast<std::uint32_t>(idx));
    m_.weight.push_back(w);
  }
  void end_row() { m_.row_start.push_back(m_.col.size()); }
  PlaneMapPtr finish() { return std::make_shared<const PlaneMap>(std::move(m_)); }

 private:
  PlaneMap m_;
};

}  // namespace

PlaneMapPtr make_correlation3x3(std::size_t h, std::size_t w, const double (&kernel)[3][3]) {
  MapBuilder b(h, w, h, w);
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) {
      for (int dv = -1; dv <= 1; ++dv)
        for (int du = -1; du <= 1; ++du) {
          const std::size_t sv = clamp_index(static_cast<long>(v) + dv, h);
          const std::size_t su = clamp_index(static_cast<long>(u) + du, w);
          b.tap(sv * w + su, kernel[dv + 1][du + 1]);
        }
      b.end_row();
    }
  return b.finish();
}

PlaneMapPtr make_shift(std::size_t h, std::size_t w, int dv, int du) {
  MapBuilder b(h, w, h, w);
  for (std::size_t v = 0; v < h; ++v)
    for (std::size_t u = 0; u < w; ++u) {
      b.tap(clamp_index(static_cast<long>(v) + dv, h) * w + clamp_index(static_cast<long>(u) + du, w), 1.0);
      b.end_row();
    }
  return b.finish();
}

PlaneMapPtr make_bilinear(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
  auto axis = [](std::size_t i, std::size_t src, std::size_t dst, std::size_t& i0, std::size_t& i1,
                 double& frac) {
    double c = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(src - 1));
    i0 = static_cast<std::size_t>(std::floor(c));
    i1 = std::min(i0 + 1, src - 1);
    frac = c - static_cast<double>(i0);
  };
  MapBuilder b(in_h, in_w, out_h, out_w);
  for (std::size_t v = 0; v < out_h; ++v) {
    std::size_t v0, v1;
    double fv;
    axis(v, in_h, out_h, v0, v1, fv);
    for (std::size_t u = 0; u < out_w; ++u) {
      std::size_t u0, u1;
      double fu;
      axis(u, in_w, out_w, u0, u1, fu);
      b.tap(v0 * in_w + u0, (1.0 - fv) * (1.0 - fu));
      b.tap(v0 * in_w + u1, (1.0 - fv) * fu);
      b.tap(v1 * in_w + u0, fv * (1.0 - fu));
      b.tap(v1 * in_w + u1, fv * fu);
      b.end_row();
    }
  }
  return b.finish();
}

PlaneMapPtr make_avg_pool(std::size_t h, std::size_t w, std::size_t k) {
  DUO_REQUIRE(k > 0 && h % k == 0 && w % k == 0, "avg pool window must divide the plane");
  MapBuilder b(h, w, h / k, w / k);
  const double wt = 1.0 / static_cast<double>(k * k);
  for (std::size_t v = 0; v < h / k; ++v)
    for (std::size_t u = 0; u < w / k; ++u) {
      for (std::size_t dv = 0; dv < k; ++dv)
        for (std::size_t du = 0; du < k; ++du) b.tap((v * k + dv) * w + u * k + du, wt);
      b.end_row();
    }
  return b.finish();
}

Var apply_map(Var x, const PlaneMapPtr& map) {
  Tensor y = map->apply(x.value());
  const std::size_t xi = x.id;
  return x.tape->record(std::move(y), {x},
                        [xi, map](Tape& t, const Tensor&, const Tensor& g) {
                          map->apply_transpose_add(g, t.grad_slot(xi));
                        },
                        "plane_map");
}

Var conv2d(Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  DUO_REQUIRE(xv.rank() == 4 && wv.rank() == 4 && wv.dim(1) == xv.dim(1) && wv.dim(2) == wv.dim(3),
              "conv2d shape mismatch: x " + shape_string(xv.shape()) + " w " + shape_string(wv.shape()));
  DUO_REQUIRE(b.value().rank() == 1 && b.size() == wv.dim(0), "conv2d bias shape");
  const std::size_t n = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const std::size_t cout = wv.dim(0), k = wv.dim(2);
  DUO_REQUIRE(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d kernel larger than padded input");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  const std::size_t q = cin * k * k, p = ho * wo;

  // im2col for every image, kept for the backward pass.
  auto cols = std::make_shared<std::vector<double>>(n * q * p, 0.0);
  for (std::size_t bi = 0; bi < n; ++bi) {
    double* c = cols->data() + bi * q * p;
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* row = c + ((ci * k + ky) * k + kx) * p;
          const double* plane = xv.data() + (bi * cin + ci) * h * wd;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
              row[oy * wo + ox] = plane[iy * wd + ix];
            }
          }
        }
  }

  Tensor y(Shape{n, cout, ho, wo});
  for (std::size_t bi = 0; bi < n; ++bi) {
    const double* c = cols->data() + bi * q * p;
    for (std::size_t co = 0; co < cout; ++co) {
      double* out = y.data() + (bi * cout + co) * p;
      const double bias = b.value()[co];
      for (std::size_t i = 0; i < p; ++i) out[i] = bias;
      const double* wrow = wv.data() + co * q;
      for (std::size_t qi = 0; qi < q; ++qi) {
        const double wq = wrow[qi];
        const double* crow = c + qi * p;
        for (std::size_t i = 0; i < p; ++i) out[i] += wq * crow[i];
      }
    }
  }

  const std::size_t xid = x.id, wid = w.id, bid = b.id;
  return x.tape->record(
      std::move(y), {x, w, b},
      [=](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& wv = t.value(wid);
        if (t.requires_grad(bid)) {
          Tensor& gb = t.grad_slot(bid);
          for (std::size_t bi = 0; bi < n; ++bi)
            for (std::size_t co = 0; co < cout; ++co) {
              const double* gr = g.data() + (bi * cout + co) * p;
              double s = 0.0;
              for (std::size_t i = 0; i < p; ++i) s += gr[i];
              gb[co] += s;
            }
        }
        if (t.requires_grad(wid)) {
          Tensor& gw = t.grad_slot(wid);
          for (std::size_t bi = 0; bi < n; ++bi) {
            const double* c = cols->data() + bi * q * p;
            for (std::size_t co = 0; co < cout; ++co) {
              const double* gr = g.data() + (bi * cout + co) * p;
              double* gwrow = gw.data() + co * q;
              for (std::size_t qi = 0; qi < q; ++qi) {
                const double* crow = c + qi * p;
                double s = 0.0;
                for (std::size_t i = 0; i < p; ++i) s += gr[i] * crow[i];
                gwrow[qi] += s;
              }
            }
          }
        }
        if (t.requires_grad(xid)) {
          Tensor& gx = t.grad_slot(xid);
          std::vector<double> gcol(q * p);
          for (std::size_t bi = 0; bi < n; ++bi) {
            std::fill(gcol.begin(), gcol.end(), 0.0);
            for (std::size_t co = 0; co < cout; ++co) {
              const double* gr = g.data() + (bi * cout + co) * p;
              const double* wrow = wv.data() + co * q;
              for (std::size_t qi = 0; qi < q; ++qi) {
                const double wq = wrow[qi];
                double* dst = gcol.data() + qi * p;
                for (std::size_t i = 0; i < p; ++i) dst[i] += wq * gr[i];
              }
            }
            for (std::size_t ci = 0; ci < cin; ++ci)
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const double* row = gcol.data() + ((ci * k + ky) * k + kx) * p;
                  double* plane = gx.data() + (bi * cin + ci) * h * wd;
                  for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                      const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                      if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                      plane[iy * wd + ix] += row[oy * wo + ox];
                    }
                  }
                }
          }
        }
      },
      "conv2d");
}

namespace {

void check_norm_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  DUO_REQUIRE(x.rank() == 4, "batch norm needs NCHW");
  DUO_REQUIRE(gamma.rank() == 1 && gamma.size() == x.dim(1) && beta.size() == x.dim(1),
              "batch norm affine shape");
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  const Tensor& xv = x.value();
  check_norm_shapes(xv, gamma.value(), beta.value());
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  const double m = static_cast<double>(n * plane);
  Tensor mean(Shape{c}), var(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* src = xv.data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += src[i];
    }
    const double mu = s / m;
    double ss = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double* src = xv.data() + (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) ss += (src[i] - mu) * (src[i] - mu);
    }
    mean[ch] = mu;
    var[ch] = ss / m;
  }
  auto xhat = std::make_shared<Tensor>(xv.shape());
  Tensor inv_std(Shape{c});
  Tensor y(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    const double gm = gamma.value()[ch], bt = beta.value()[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (xv[off + i] - mean[ch]) * inv_std[ch];
        (*xhat)[off + i] = xh;
        y[off + i] = gm * xh + bt;
      }
    }
  }
  if (stats) *stats = BatchStats{mean, var};
  const std::size_t xid = x.id, gid = gamma.id, bid = beta.id;
  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [=](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& gm = t.value(gid);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sg = 0.0, sgx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sg += g[off + i];
              sgx += g[off + i] * (*xhat)[off + i];
            }
          }
          if (t.requires_grad(gid)) t.grad_slot(gid)[ch] += sgx;
          if (t.requires_grad(bid)) t.grad_slot(bid)[ch] += sg;
          if (t.requires_grad(xid)) {
            Tensor& gx = t.grad_slot(xid);
            const double k = gm[ch] * inv_std[ch] / m;
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * plane;
              for (std::size_t i = 0; i < plane; ++i)
                gx[off + i] += k * (m * g[off + i] - sg - (*xhat)[off + i] * sgx);
            }
          }
        }
      },
      "batch_norm_train");
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean,
                    const Tensor& running_var, double eps) {
  const Tensor& xv = x.value();
  check_norm_shapes(xv, gamma.value(), beta.value());
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  DUO_REQUIRE(running_mean.size() == c && running_var.size() == c, "running stats shape");
  Tensor inv_std(Shape{c});
  auto xhat = std::make_shared<Tensor>(xv.shape());
  Tensor y(xv.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    inv_std[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
    const double gm = gamma.value()[ch], bt = beta.value()[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double xh = (xv[off + i] - running_mean[ch]) * inv_std[ch];
        (*xhat)[off + i] = xh;
        y[off + i] = gm * xh + bt;
      }
    }
  }
  const std::size_t xid = x.id, gid = gamma.id, bid = beta.id;
  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [=](Tape& t, const Tensor&, const Tensor& g) {
        const Tensor& gm = t.value(gid);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sg = 0.0, sgx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sg += g[off + i];
              sgx += g[off + i] * (*xhat)[off + i];
            }
          }
          if (t.requires_grad(gid)) t.grad_slot(gid)[ch] += sgx;
          if (t.requires_grad(bid)) t.grad_slot(bid)[ch] += sg;
          if (t.requires_grad(xid)) {
            Tensor& gx = t.grad_slot(xid);
            const double k = gm[ch] * inv_std[ch];
            for (std::size_t b = 0; b < n; ++b) {
              const std::size_t off = (b * c + ch) * plane;
              for (std::size_t i = 0; i < plane; ++i) gx[off + i] += k * g[off + i];
            }
          }
        }
      },
      "batch_norm_eval");
}

}  // namespace duo::ad
