#include "duo/autodiff.hpp"

#include <cmath>

#include "duo/errors.hpp"
#include "duo/linalg.hpp"

namespace duo::ad {

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

const Tensor& GradientMap::at(Var v) const {
  auto it = grads_.find(v.id);
  DUO_REQUIRE(it != grads_.end(), "no gradient recorded for node " + std::to_string(v.id));
  return it->second;
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_leaf = true;
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "const";
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn, const char* op) {
  bool any = false;
  for (const Var& p : parents) {
    DUO_REQUIRE(p.tape == this, "operands belong to different tapes");
    any = any || nodes_[p.id].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (any) {
    n.requires_grad = true;
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn, const char* op) {
  bool any = false;
  for (const Var& p : parents) {
    DUO_REQUIRE(p.tape == this, "operands belong to different tapes");
    any = any || nodes_[p.id].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  if (any) {
    n.requires_grad = true;
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& slot = grad_slot(id);
  DUO_REQUIRE(slot.size() == g.size(), std::string("gradient size mismatch at ") + nodes_[id].op);
  double* s = slot.data();
  const double* v = g.data();
  for (std::size_t i = 0; i < slot.size(); ++i) s[i] += v[i];
}

GradientMap Tape::backward(Var root) {
  DUO_REQUIRE(root.tape == this, "root belongs to a different tape");
  DUO_REQUIRE(nodes_[root.id].value.size() == 1, "backward() needs a scalar root, got shape " +
                                                     shape_string(nodes_[root.id].value.shape()));
  GradientMap out;
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[root.id].requires_grad) return out;

  grad_slot(root.id).fill(1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (!out.diag_.non_finite && !n.grad.all_finite()) {
      out.diag_.non_finite = true;
      out.diag_.first_bad_node = i;
      out.diag_.op = n.op;
    }
    if (n.backward) n.backward(*this, n.value, n.grad);
  }
  for (std::size_t i = 0; i <= root.id; ++i) {
    Node& n = nodes_[i];
    if (n.is_leaf && n.requires_grad && !n.grad.empty()) out.grads_.emplace(i, n.grad);
  }
  return out;
}

namespace {

void require_same(Var a, Var b, const char* op) {
  DUO_REQUIRE(a.value().shape() == b.value().shape(),
              std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                  shape_string(b.shape()));
}

template <class F, class DF>
Var unary(Var a, const char* op, F f, DF df) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t aid = a.id;
  return a.tape->record(
      std::move(y), {a},
      [aid, df](Tape& t, const Tensor& yv, const Tensor& g) {
        const Tensor& xv = t.value(aid);
        Tensor& ga = t.grad_slot(aid);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
      },
      op);
}

}  // namespace

Var add(Var a, Var b) {
  require_same(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b},
                        [ai, bi](Tape& t, const Tensor&, const Tensor& g) {
                          t.accumulate(ai, g);
                          t.accumulate(bi, g);
                        },
                        "add");
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b},
                        [ai, bi](Tape& t, const Tensor&, const Tensor& g) {
                          t.accumulate(ai, g);
                          if (t.requires_grad(bi)) {
                            Tensor& gb = t.grad_slot(bi);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                          }
                        },
                        "sub");
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b},
                        [ai, bi](Tape& t, const Tensor&, const Tensor& g) {
                          const Tensor& av = t.value(ai);
                          const Tensor& bv = t.value(bi);
                          if (t.requires_grad(ai)) {
                            Tensor& ga = t.grad_slot(ai);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                          }
                          if (t.requires_grad(bi)) {
                            Tensor& gb = t.grad_slot(bi);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                          }
                        },
                        "mul");
}

Var div(Var a, Var b) {
  require_same(a, b, "div");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b},
                        [ai, bi](Tape& t, const Tensor& yv, const Tensor& g) {
                          const Tensor& bv = t.value(bi);
                          if (t.requires_grad(ai)) {
                            Tensor& ga = t.grad_slot(ai);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
                          }
                          if (t.requires_grad(bi)) {
                            Tensor& gb = t.grad_slot(bi);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * yv[i] / bv[i];
                          }
                        },
                        "div");
}

Var add(Var a, double c) {
  return unary(a, "add_const", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var scale(Var a, double c) {
  return unary(a, "scale", [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var exp(Var a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(a, "abs", [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var pow(Var a, double e) {
  return unary(a, "pow", [e](double x) { return std::pow(x, e); },
               [e](double x, double) { return e == 0.0 ? 0.0 : e * std::pow(x, e - 1.0); });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var clamp_min(Var a, double lo) {
  return unary(a, "clamp_min", [lo](double x) { return x < lo ? lo : x; },
               [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

Var scale_by(Var x, Var s) {
  DUO_REQUIRE(s.size() == 1, "scale_by: scale must have one element");
  const double sv = s.value()[0];
  Tensor y = x.value();
  y *= sv;
  const std::size_t xi = x.id, si = s.id;
  return x.tape->record(std::move(y), {x, s},
                        [xi, si](Tape& t, const Tensor&, const Tensor& g) {
                          const double sv = t.value(si)[0];
                          if (t.requires_grad(xi)) {
                            Tensor& gx = t.grad_slot(xi);
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sv;
                          }
                          if (t.requires_grad(si)) {
                            const Tensor& xv = t.value(xi);
                            double acc = 0.0;
                            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                            t.grad_slot(si)[0] += acc;
                          }
                        },
                        "scale_by");
}

Var expand(Var s, const Shape& shape) {
  DUO_REQUIRE(s.size() == 1, "expand: source must have one element");
  Tensor y(shape, s.value()[0]);
  const std::size_t si = s.id;
  return s.tape->record(std::move(y), {s},
                        [si](Tape& t, const Tensor&, const Tensor& g) { t.grad_slot(si)[0] += sum(g); },
                        "expand");
}

Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

Var sum(Var a) {
  const std::size_t ai = a.id;
  return a.tape->record(Tensor::scalar(duo::sum(a.value())), {a},
                        [ai](Tape& t, const Tensor&, const Tensor& g) {
                          Tensor& ga = t.grad_slot(ai);
                          const double gv = g[0];
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
                        },
                        "sum");
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var dot(Var a, Var b) { return sum(mul(a, b)); }

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  const std::size_t ai = a.id;
  return a.tape->record(std::move(y), {a},
                        [ai](Tape& t, const Tensor&, const Tensor& g) {
                          Tensor& ga = t.grad_slot(ai);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        },
                        "reshape");
}

Var gather(Var a, std::vector<std::size_t> indices) {
  const Tensor& x = a.value();
  Tensor y(Shape{indices.size()});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    DUO_REQUIRE(indices[i] < x.size(), "gather index out of range");
    y[i] = x[indices[i]];
  }
  const std::size_t ai = a.id;
  return a.tape->record(std::move(y), {a},
                        [ai, idx = std::move(indices)](Tape& t, const Tensor&, const Tensor& g) {
                          Tensor& ga = t.grad_slot(ai);
                          for (std::size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
                        },
                        "gather");
}

Var concat(const std::vector<Var>& parts) {
  DUO_REQUIRE(!parts.empty(), "concat of nothing");
  std::vector<double> v;
  std::vector<std::size_t> ids, offsets;
  for (const Var& p : parts) {
    offsets.push_back(v.size());
    ids.push_back(p.id);
    v.insert(v.end(), p.value().values().begin(), p.value().values().end());
  }
  return parts[0].tape->record(
      Tensor::vector(std::move(v)), parts,
      [ids, offsets](Tape& t, const Tensor&, const Tensor& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Tensor& gp = t.grad_slot(ids[k]);
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
        }
      },
      "concat");
}

Var slice_channels(Var x, std::size_t c0, std::size_t c1) {
  const Tensor& xv = x.value();
  DUO_REQUIRE(xv.rank() == 4 && c0 < c1 && c1 <= xv.dim(1), "slice_channels: bad range");
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3), k = c1 - c0;
  Tensor y(Shape{n, k, xv.dim(2), xv.dim(3)});
  for (std::size_t b = 0; b < n; ++b)
    std::copy_n(xv.data() + (b * c + c0) * plane, k * plane, y.data() + b * k * plane);
  const std::size_t xi = x.id;
  return x.tape->record(std::move(y), {x},
                        [xi, n, c, c0, k, plane](Tape& t, const Tensor&, const Tensor& g) {
                          Tensor& gx = t.grad_slot(xi);
                          for (std::size_t b = 0; b < n; ++b) {
                            double* dst = gx.data() + (b * c + c0) * plane;
                            const double* src = g.data() + b * k * plane;
                            for (std::size_t i = 0; i < k * plane; ++i) dst[i] += src[i];
                          }
                        },
                        "slice_channels");
}

Var concat_channels(const std::vector<Var>& parts) {
  DUO_REQUIRE(!parts.empty(), "concat_channels of nothing");
  const Shape& s0 = parts[0].shape();
  DUO_REQUIRE(s0.size() == 4, "concat_channels needs NCHW");
  const std::size_t n = s0[0], plane = s0[2] * s0[3];
  std::size_t total = 0;
  std::vector<std::size_t> ids, chans;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    DUO_REQUIRE(s.size() == 4 && s[0] == n && s[2] == s0[2] && s[3] == s0[3],
                "concat_channels: incompatible shapes");
    ids.push_back(p.id);
    chans.push_back(s[1]);
    total += s[1];
  }
  Tensor y(Shape{n, total, s0[2], s0[3]});
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      std::copy_n(parts[k].value().data() + b * chans[k] * plane, chans[k] * plane,
                  y.data() + (b * total + off) * plane);
      off += chans[k];
    }
  }
  return parts[0].tape->record(
      std::move(y), parts,
      [ids, chans, n, total, plane](Tape& t, const Tensor&, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            Tensor& gp = t.grad_slot(ids[k]);
            for (std::size_t b = 0; b < n; ++b) {
              const double* src = g.data() + (b * total + off) * plane;
              double* dst = gp.data() + b * chans[k] * plane;
              for (std::size_t i = 0; i < chans[k] * plane; ++i) dst[i] += src[i];
            }
          }
          off += chans[k];
        }
      },
      "concat_channels");
}

Var matmul(Var a, Var b) {
  Tensor y = duo::matmul(a.value(), b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b},
                        [ai, bi](Tape& t, const Tensor&, const Tensor& g) {
                          if (t.requires_grad(ai))
                            t.accumulate(ai, duo::matmul(g, transpose(t.value(bi))));
                          if (t.requires_grad(bi))
                            t.accumulate(bi, duo::matmul(transpose(t.value(ai)), g));
                        },
                        "matmul");
}

Var matvec(Var a, Var x) {
  Tensor y = duo::matvec(a.value(), x.value());
  const std::size_t ai = a.id, xi = x.id;
  return a.tape->record(std::move(y), {a, x},
                        [ai, xi](Tape& t, const Tensor&, const Tensor& g) {
                          const Tensor& av = t.value(ai);
                          const Tensor& xv = t.value(xi);
                          const std::size_t n = av.dim(0), m = av.dim(1);
                          if (t.requires_grad(ai)) {
                            Tensor& ga = t.grad_slot(ai);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < m; ++j) ga.at(i, j) += g[i] * xv[j];
                          }
                          if (t.requires_grad(xi)) {
                            Tensor& gx = t.grad_slot(xi);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < m; ++j) gx[j] += av.at(i, j) * g[i];
                          }
                        },
                        "matvec");
}

Var outer(Var a, Var b) {
  DUO_REQUIRE(a.value().rank() == 1 && b.value().rank() == 1, "outer needs vectors");
  const std::size_t n = a.size(), m = b.size();
  Tensor y(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y.at(i, j) = a.value()[i] * b.value()[j];
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(y), {a, b},
                        [ai, bi, n, m](Tape& t, const Tensor&, const Tensor& g) {
                          const Tensor& av = t.value(ai);
                          const Tensor& bv = t.value(bi);
                          if (t.requires_grad(ai)) {
                            Tensor& ga = t.grad_slot(ai);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < m; ++j) ga[i] += g.at(i, j) * bv[j];
                          }
                          if (t.requires_grad(bi)) {
                            Tensor& gb = t.grad_slot(bi);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < m; ++j) gb[j] += g.at(i, j) * av[i];
                          }
                        },
                        "outer");
}

Var diag(Var v) {
  DUO_REQUIRE(v.value().rank() == 1, "diag needs a vector");
  const std::size_t n = v.size();
  Tensor y(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) y.at(i, i) = v.value()[i];
  const std::size_t vi = v.id;
  return v.tape->record(std::move(y), {v},
                        [vi, n](Tape& t, const Tensor&, const Tensor& g) {
                          Tensor& gv = t.grad_slot(vi);
                          for (std::size_t i = 0; i < n; ++i) gv[i] += g.at(i, i);
                        },
                        "diag");
}

Var scale_rows(Var m, Var v) {
  const Tensor& mv = m.value();
  DUO_REQUIRE(mv.rank() == 2 && v.value().rank() == 1 && v.size() == mv.dim(0),
              "scale_rows shape mismatch");
  const std::size_t r = mv.dim(0), c = mv.dim(1);
  Tensor y = mv;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y.at(i, j) *= v.value()[i];
  const std::size_t mi = m.id, vi = v.id;
  return m.tape->record(std::move(y), {m, v},
                        [mi, vi, r, c](Tape& t, const Tensor&, const Tensor& g) {
                          const Tensor& mv = t.value(mi);
                          const Tensor& vv = t.value(vi);
                          if (t.requires_grad(mi)) {
                            Tensor& gm = t.grad_slot(mi);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j) gm.at(i, j) += g.at(i, j) * vv[i];
                          }
                          if (t.requires_grad(vi)) {
                            Tensor& gv = t.grad_slot(vi);
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j) gv[i] += g.at(i, j) * mv.at(i, j);
                          }
                        },
                        "scale_rows");
}

Var solve(Var a, Var b) {
  Tensor x = solve_linear(a.value(), b.value());
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(x), {a, b},
                        [ai, bi](Tape& t, const Tensor& xv, const Tensor& g) {
                          // b_bar = A^{-T} g ; A_bar = -b_bar x^T
                          Tensor bbar = solve_linear(transpose(t.value(ai)), g);
                          if (t.requires_grad(bi)) t.accumulate(bi, bbar);
                          if (t.requires_grad(ai)) {
                            Tensor& ga = t.grad_slot(ai);
                            const std::size_t n = xv.size();
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < n; ++j) ga.at(i, j) -= bbar[i] * xv[j];
                          }
                        },
                        "solve");
}

Var softmax(Var h) {
  const Tensor& x = h.value();
  DUO_REQUIRE(x.rank() == 1, "softmax needs a vector");
  double mx = -INFINITY;
  for (double v : x.values()) mx = std::max(mx, v);
  Tensor y(x.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (y[i] = std::exp(x[i] - mx));
  y *= 1.0 / s;
  const std::size_t hi = h.id;
  return h.tape->record(std::move(y), {h},
                        [hi](Tape& t, const Tensor& p, const Tensor& g) {
                          double dp = 0.0;
                          for (std::size_t i = 0; i < p.size(); ++i) dp += g[i] * p[i];
                          Tensor& gh = t.grad_slot(hi);
                          for (std::size_t i = 0; i < p.size(); ++i) gh[i] += p[i] * (g[i] - dp);
                        },
                        "softmax");
}

Var log_softmax(Var h) {
  const Tensor& x = h.value();
  DUO_REQUIRE(x.rank() == 1, "log_softmax needs a vector");
  double mx = -INFINITY;
  for (double v : x.values()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : x.values()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - lse;
  const std::size_t hi = h.id;
  return h.tape->record(std::move(y), {h},
                        [hi](Tape& t, const Tensor& lp, const Tensor& g) {
                          double gs = 0.0;
                          for (std::size_t i = 0; i < g.size(); ++i) gs += g[i];
                          Tensor& gh = t.grad_slot(hi);
                          for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i] - std::exp(lp[i]) * gs;
                        },
                        "log_softmax");
}

Var log_softmax_channels(Var xv) {
  const Tensor& x = xv.value();
  DUO_REQUIRE(x.rank() == 4, "log_softmax_channels needs NCHW");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      const double* xs = x.data() + b * c * plane + p;
      double* ys = y.data() + b * c * plane + p;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, xs[k * plane]);
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += std::exp(xs[k * plane] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t k = 0; k < c; ++k) ys[k * plane] = xs[k * plane] - lse;
    }
  const std::size_t xi = xv.id;
  return xv.tape->record(std::move(y), {xv},
                         [xi, n, c, plane](Tape& t, const Tensor& lp, const Tensor& g) {
                           Tensor& gx = t.grad_slot(xi);
                           for (std::size_t b = 0; b < n; ++b)
                             for (std::size_t p = 0; p < plane; ++p) {
                               const std::size_t base = b * c * plane + p;
                               double gs = 0.0;
                               for (std::size_t k = 0; k < c; ++k) gs += g[base + k * plane];
                               for (std::size_t k = 0; k < c; ++k)
                                 gx[base + k * plane] +=
                                     g[base + k * plane] - std::exp(lp[base + k * plane]) * gs;
                             }
                         },
                         "log_softmax_channels");
}

}  // namespace duo::ad
