#include "sketchkp/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace sketchkp {

namespace {

thread_local bool g_grad_enabled = true;

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

bool wants_grad(const std::vector<Var>& parents) {
  if (!g_grad_enabled) return false;
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (wants_grad(parents)) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw ShapeError(std::string(op) + ": shape mismatch " + Tensor::shape_str(a->value.shape()) +
                     " vs " + Tensor::shape_str(b->value.shape()));
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Var make_leaf(Tensor value, bool requires_grad, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

Var make_constant(Tensor value) { return make_leaf(std::move(value), false); }

Var make_scalar(double v) { return make_constant(Tensor::scalar(v)); }

Var detach(const Var& v) { return make_constant(v->value); }

void backward(const Var& root) {
  if (root->value.size() != 1) throw ShapeError("backward: root must be scalar");
  // iterative topological order (children before parents)
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad().fill(0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params)
    if (!p->grad.empty()) p->grad.fill(0.0);
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const std::int64_t m = self.grad.size();
    if (a->requires_grad) {
      auto& ga = a->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) ga[i] += self.grad[i];
    }
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) gb[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const std::int64_t m = self.grad.size();
    if (a->requires_grad) {
      auto& ga = a->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) ga[i] += self.grad[i];
    }
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) gb[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& self) {
    const std::int64_t m = self.grad.size();
    if (a->requires_grad) {
      auto& ga = a->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) ga[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) gb[i] += self.grad[i] * a->value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * s;
  return make_op(std::move(out), {a}, [a, s](Node& self) {
    auto& ga = a->ensure_grad();
    const std::int64_t m = self.grad.size();
    for (std::int64_t i = 0; i < m; ++i) ga[i] += self.grad[i] * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] + s;
  return make_op(std::move(out), {a}, [a](Node& self) {
    auto& ga = a->ensure_grad();
    const std::int64_t m = self.grad.size();
    for (std::int64_t i = 0; i < m; ++i) ga[i] += self.grad[i];
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  return make_op(std::move(out), {a}, [a](Node& self) {
    auto& ga = a->ensure_grad();
    const std::int64_t m = self.grad.size();
    for (std::int64_t i = 0; i < m; ++i)
      if (a->value[i] > 0.0) ga[i] += self.grad[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
  Tensor saved = out;
  return make_op(std::move(out), {a}, [a, saved](Node& self) {
    auto& ga = a->ensure_grad();
    const std::int64_t m = self.grad.size();
    for (std::int64_t i = 0; i < m; ++i) ga[i] += self.grad[i] * saved[i] * (1.0 - saved[i]);
  });
}

Var exp_of(const Var& a) {
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::exp(a->value[i]);
  Tensor saved = out;
  return make_op(std::move(out), {a}, [a, saved](Node& self) {
    auto& ga = a->ensure_grad();
    const std::int64_t m = self.grad.size();
    for (std::int64_t i = 0; i < m; ++i) ga[i] += self.grad[i] * saved[i];
  });
}

Var concat(const Var& a, const Var& b) {
  if (a->value.ndim() != 1 || b->value.ndim() != 1) throw ShapeError("concat: expects vectors");
  const int na = a->value.dim(0), nb = b->value.dim(0);
  Tensor out({na + nb});
  for (int i = 0; i < na; ++i) out[i] = a->value[i];
  for (int i = 0; i < nb; ++i) out[na + i] = b->value[i];
  return make_op(std::move(out), {a, b}, [a, b, na, nb](Node& self) {
    if (a->requires_grad) {
      auto& ga = a->ensure_grad();
      for (int i = 0; i < na; ++i) ga[i] += self.grad[i];
    }
    if (b->requires_grad) {
      auto& gb = b->ensure_grad();
      for (int i = 0; i < nb; ++i) gb[i] += self.grad[na + i];
    }
  });
}

Var flatten(const Var& a) {
  Tensor out = a->value.reshaped({static_cast<int>(a->value.size())});
  return make_op(std::move(out), {a}, [a](Node& self) {
    auto& ga = a->ensure_grad();
    const std::int64_t m = self.grad.size();
    for (std::int64_t i = 0; i < m; ++i) ga[i] += self.grad[i];
  });
}

Var sum_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) return make_scalar(0.0);
  double total = 0.0;
  for (const auto& x : xs) {
    if (x->value.size() != 1) throw ShapeError("sum_scalars: non-scalar term");
    total += x->value[0];
  }
  auto parents = xs;
  return make_op(Tensor::scalar(total), std::move(parents), [xs](Node& self) {
    const double g = self.grad[0];
    for (const auto& x : xs)
      if (x->requires_grad) x->ensure_grad()[0] += g;
  });
}

Var mean_vectors(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("mean_vectors: empty list");
  Tensor out(xs[0]->value.shape());
  for (const auto& x : xs) {
    check_same_shape(xs[0], x, "mean_vectors");
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += x->value[i];
  }
  const double inv = 1.0 / static_cast<double>(xs.size());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= inv;
  auto parents = xs;
  return make_op(std::move(out), std::move(parents), [xs, inv](Node& self) {
    const std::int64_t m = self.grad.size();
    for (const auto& x : xs) {
      if (!x->requires_grad) continue;
      auto& gx = x->ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) gx[i] += self.grad[i] * inv;
    }
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_op(Tensor::scalar(s), {a}, [a](Node& self) {
    auto& ga = a->ensure_grad();
    const double g = self.grad[0];
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var sq_l2_diff(const Var& a, const Var& b) {
  check_same_shape(a, b, "sq_l2_diff");
  double s = 0.0;
  const std::int64_t n = a->value.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = a->value[i] - b->value[i];
    s += d * d;
  }
  return make_op(Tensor::scalar(s), {a, b}, [a, b](Node& self) {
    const double g = self.grad[0];
    const std::int64_t n = a->value.size();
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = a->value[i] - b->value[i];
      if (a->requires_grad) a->ensure_grad()[i] += g * 2.0 * d;
      if (b->requires_grad) b->ensure_grad()[i] -= g * 2.0 * d;
    }
  });
}

Var l2_diff(const Var& a, const Var& b) {
  check_same_shape(a, b, "l2_diff");
  double s = 0.0;
  const std::int64_t n = a->value.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = a->value[i] - b->value[i];
    s += d * d;
  }
  const double r = std::sqrt(s);
  return make_op(Tensor::scalar(r), {a, b}, [a, b, r](Node& self) {
    if (r == 0.0) return;  // subgradient 0 at the non-differentiable point
    const double g = self.grad[0] / r;
    const std::int64_t n = a->value.size();
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = a->value[i] - b->value[i];
      if (a->requires_grad) a->ensure_grad()[i] += g * d;
      if (b->requires_grad) b->ensure_grad()[i] -= g * d;
    }
  });
}

Var l1_diff(const Var& a, const Var& b) {
  check_same_shape(a, b, "l1_diff");
  double s = 0.0;
  const std::int64_t n = a->value.size();
  for (std::int64_t i = 0; i < n; ++i) s += std::abs(a->value[i] - b->value[i]);
  return make_op(Tensor::scalar(s), {a, b}, [a, b](Node& self) {
    const double g = self.grad[0];
    const std::int64_t n = a->value.size();
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = a->value[i] - b->value[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (a->requires_grad) a->ensure_grad()[i] += g * sgn;
      if (b->requires_grad) b->ensure_grad()[i] -= g * sgn;
    }
  });
}

Var softmax(const Var& logits) {
  if (logits->value.ndim() != 1) throw ShapeError("softmax: expects vector");
  const int n = logits->value.dim(0);
  double mx = logits->value[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits->value[i]);
  Tensor out({n});
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(logits->value[i] - mx);
    z += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= z;
  Tensor saved = out;
  return make_op(std::move(out), {logits}, [logits, saved, n](Node& self) {
    auto& gl = logits->ensure_grad();
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += self.grad[i] * saved[i];
    for (int i = 0; i < n; ++i) gl[i] += saved[i] * (self.grad[i] - dot);
  });
}

Var pick_neg_log(const Var& probs, int index) {
  if (probs->value.ndim() != 1) throw ShapeError("pick_neg_log: expects vector");
  const int n = probs->value.dim(0);
  if (index < 0 || index >= n) throw ShapeError("pick_neg_log: index out of range");
  const double p = probs->value[index];
  return make_op(Tensor::scalar(-std::log(p)), {probs}, [probs, index, p](Node& self) {
    probs->ensure_grad()[index] += self.grad[0] * (-1.0 / p);
  });
}

Var cross_entropy_logits(const Var& logits, int index) {
  if (logits->value.ndim() != 1) throw ShapeError("cross_entropy_logits: expects vector");
  const int n = logits->value.dim(0);
  if (index < 0 || index >= n) throw ShapeError("cross_entropy_logits: index out of range");
  double mx = logits->value[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits->value[i]);
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(logits->value[i] - mx);
  const double lse = mx + std::log(z);
  Tensor soft({n});
  for (int i = 0; i < n; ++i) soft[i] = std::exp(logits->value[i] - lse);
  return make_op(Tensor::scalar(lse - logits->value[index]), {logits},
                 [logits, soft, index, n](Node& self) {
                   auto& gl = logits->ensure_grad();
                   const double g = self.grad[0];
                   for (int i = 0; i < n; ++i)
                     gl[i] += g * (soft[i] - (i == index ? 1.0 : 0.0));
                 });
}

Var linear(const Var& W, const Var& b, const Var& x) {
  if (W->value.ndim() != 2 || x->value.ndim() != 1 || b->value.ndim() != 1)
    throw ShapeError("linear: expects W(out,in), b(out), x(in)");
  const int out = W->value.dim(0), in = W->value.dim(1);
  if (x->value.dim(0) != in || b->value.dim(0) != out)
    throw ShapeError("linear: dimension mismatch");
  Tensor y({out});
  CMapM Wm(W->value.data(), out, in);
  CMapV xv(x->value.data(), in);
  MapV yv(y.data(), out);
  yv = Wm * xv;
  for (int i = 0; i < out; ++i) y[i] += b->value[i];
  return make_op(std::move(y), {W, b, x}, [W, b, x, out, in](Node& self) {
    CMapV gy(self.grad.data(), out);
    if (W->requires_grad) {
      MapM gW(W->ensure_grad().data(), out, in);
      CMapV xv(x->value.data(), in);
      gW.noalias() += gy * xv.transpose();
    }
    if (b->requires_grad) {
      MapV gb(b->ensure_grad().data(), out);
      gb += gy;
    }
    if (x->requires_grad) {
      MapV gx(x->ensure_grad().data(), in);
      CMapM Wm(W->value.data(), out, in);
      gx.noalias() += Wm.transpose() * gy;
    }
  });
}

namespace {

// im2col: (cin*k*k) x (ho*wo)
Tensor im2col(const Tensor& x, int k, int stride, int pad, int ho, int wo) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor col({cin * k * k, ho * wo});
  double* cd = col.data();
  const double* xd = x.data();
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const std::int64_t row = (static_cast<std::int64_t>(c) * k + ky) * k + kx;
        double* crow = cd + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
            crow[oy * wo + ox] =
                inside ? xd[(static_cast<std::int64_t>(c) * h + iy) * w + ix] : 0.0;
          }
        }
      }
    }
  }
  return col;
}

void col2im_accum(const Tensor& col, Tensor& gx, int k, int stride, int pad, int ho, int wo) {
  const int cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
  const double* cd = col.data();
  double* gd = gx.data();
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const std::int64_t row = (static_cast<std::int64_t>(c) * k + ky) * k + kx;
        const double* crow = cd + row * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            gd[(static_cast<std::int64_t>(c) * h + iy) * w + ix] += crow[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& W, const Var& b, int stride, int pad) {
  if (x->value.ndim() != 3 || W->value.ndim() != 4)
    throw ShapeError("conv2d: expects x(cin,h,w), W(cout,cin,k,k)");
  const int cin = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int cout = W->value.dim(0), k = W->value.dim(2);
  if (W->value.dim(1) != cin) throw ShapeError("conv2d: channel mismatch");
  if (W->value.dim(3) != k) throw ShapeError("conv2d: non-square kernel");
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: output would be empty");

  Tensor col = im2col(x->value, k, stride, pad, ho, wo);
  Tensor out({cout, ho, wo});
  {
    CMapM Wm(W->value.data(), cout, cin * k * k);
    CMapM cm(col.data(), cin * k * k, ho * wo);
    MapM om(out.data(), cout, ho * wo);
    om.noalias() = Wm * cm;
    for (int c = 0; c < cout; ++c) {
      double* row = out.data() + static_cast<std::int64_t>(c) * ho * wo;
      const double bv = b->value[c];
      for (int i = 0; i < ho * wo; ++i) row[i] += bv;
    }
  }
  // the column matrix is recomputed in backward to keep episode graphs lean
  return make_op(std::move(out), {x, W, b},
                 [x, W, b, stride, pad, cin, cout, k, ho, wo](Node& self) {
                   CMapM gy(self.grad.data(), cout, ho * wo);
                   if (W->requires_grad || b->requires_grad) {
                     if (b->requires_grad) {
                       MapV gb(b->ensure_grad().data(), cout);
                       gb += gy.rowwise().sum();
                     }
                     if (W->requires_grad) {
                       Tensor col = im2col(x->value, k, stride, pad, ho, wo);
                       CMapM cm(col.data(), cin * k * k, ho * wo);
                       MapM gW(W->ensure_grad().data(), cout, cin * k * k);
                       gW.noalias() += gy * cm.transpose();
                     }
                   }
                   if (x->requires_grad) {
                     Tensor gcol({cin * k * k, ho * wo});
                     MapM gc(gcol.data(), cin * k * k, ho * wo);
                     CMapM Wm(W->value.data(), cout, cin * k * k);
                     gc.noalias() = Wm.transpose() * gy;
                     col2im_accum(gcol, x->ensure_grad(), k, stride, pad, ho, wo);
                   }
                 });
}

Var maxpool2d(const Var& x, int k, int stride) {
  if (x->value.ndim() != 3) throw ShapeError("maxpool2d: expects (c,h,w)");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const int ho = (h - k) / stride + 1;
  const int wo = (w - k) / stride + 1;
  Tensor out({c, ho, wo});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.size()));
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t besti = -1;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * stride + ky, ix = ox * stride + kx;
            const std::int64_t idx = (static_cast<std::int64_t>(ch) * h + iy) * w + ix;
            if (x->value[idx] > best) {
              best = x->value[idx];
              besti = idx;
            }
          }
        }
        const std::int64_t oidx = (static_cast<std::int64_t>(ch) * ho + oy) * wo + ox;
        out[oidx] = best;
        argmax[static_cast<std::size_t>(oidx)] = besti;
      }
    }
  }
  return make_op(std::move(out), {x}, [x, argmax](Node& self) {
    auto& gx = x->ensure_grad();
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) gx[argmax[static_cast<std::size_t>(i)]] += self.grad[i];
  });
}

Var avgpool2d(const Var& x, int factor) {
  if (x->value.ndim() != 3) throw ShapeError("avgpool2d: expects (c,h,w)");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  if (h % factor != 0 || w % factor != 0) throw ShapeError("avgpool2d: size not divisible");
  if (factor == 1) return x;
  const int ho = h / factor, wo = w / factor;
  const double inv = 1.0 / (factor * factor);
  Tensor out({c, ho, wo});
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double s = 0.0;
        for (int ky = 0; ky < factor; ++ky)
          for (int kx = 0; kx < factor; ++kx)
            s += x->value.at3(ch, oy * factor + ky, ox * factor + kx);
        out.at3(ch, oy, ox) = s * inv;
      }
  return make_op(std::move(out), {x}, [x, factor, inv](Node& self) {
    auto& gx = x->ensure_grad();
    const int c = self.grad.dim(0), ho = self.grad.dim(1), wo = self.grad.dim(2);
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const double g = self.grad.at3(ch, oy, ox) * inv;
          for (int ky = 0; ky < factor; ++ky)
            for (int kx = 0; kx < factor; ++kx)
              gx.at3(ch, oy * factor + ky, ox * factor + kx) += g;
        }
  });
}

Var global_avg_pool(const Var& x) {
  if (x->value.ndim() != 3) throw ShapeError("global_avg_pool: expects (c,h,w)");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double* row = x->value.data() + static_cast<std::int64_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) s += row[i];
    out[ch] = s * inv;
  }
  return make_op(std::move(out), {x}, [x, c, h, w, inv](Node& self) {
    auto& gx = x->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const double g = self.grad[ch] * inv;
      double* row = gx.data() + static_cast<std::int64_t>(ch) * h * w;
      for (int i = 0; i < h * w; ++i) row[i] += g;
    }
  });
}

Var broadcast_mul_channels(const Var& f, const Var& v) {
  if (f->value.ndim() != 3 || v->value.ndim() != 1)
    throw ShapeError("broadcast_mul_channels: expects f(c,h,w), v(c)");
  const int c = f->value.dim(0), h = f->value.dim(1), w = f->value.dim(2);
  if (v->value.dim(0) != c)
    throw ShapeError("broadcast_mul_channels: channel mismatch " + std::to_string(c) + " vs " +
                     std::to_string(v->value.dim(0)));
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const double s = v->value[ch];
    const double* src = f->value.data() + static_cast<std::int64_t>(ch) * h * w;
    double* dst = out.data() + static_cast<std::int64_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) dst[i] = src[i] * s;
  }
  return make_op(std::move(out), {f, v}, [f, v, c, h, w](Node& self) {
    for (int ch = 0; ch < c; ++ch) {
      const double* g = self.grad.data() + static_cast<std::int64_t>(ch) * h * w;
      if (f->requires_grad) {
        double* gf = f->ensure_grad().data() + static_cast<std::int64_t>(ch) * h * w;
        const double s = v->value[ch];
        for (int i = 0; i < h * w; ++i) gf[i] += g[i] * s;
      }
      if (v->requires_grad) {
        const double* src = f->value.data() + static_cast<std::int64_t>(ch) * h * w;
        double acc = 0.0;
        for (int i = 0; i < h * w; ++i) acc += g[i] * src[i];
        v->ensure_grad()[ch] += acc;
      }
    }
  });
}

Var weighted_spatial_sum(const Var& f, const Tensor& wts) {
  if (f->value.ndim() != 3 || wts.ndim() != 2)
    throw ShapeError("weighted_spatial_sum: expects f(c,h,w), w(h,w)");
  const int c = f->value.dim(0), h = f->value.dim(1), w = f->value.dim(2);
  if (wts.dim(0) != h || wts.dim(1) != w)
    throw ShapeError("weighted_spatial_sum: weight grid mismatch");
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    const double* src = f->value.data() + static_cast<std::int64_t>(ch) * h * w;
    double s = 0.0;
    for (int i = 0; i < h * w; ++i) s += src[i] * wts[i];
    out[ch] = s;
  }
  Tensor saved = wts;
  return make_op(std::move(out), {f}, [f, saved, c, h, w](Node& self) {
    auto& gf = f->ensure_grad();
    for (int ch = 0; ch < c; ++ch) {
      const double g = self.grad[ch];
      double* dst = gf.data() + static_cast<std::int64_t>(ch) * h * w;
      for (int i = 0; i < h * w; ++i) dst[i] += g * saved[i];
    }
  });
}

double clip_grad_norm(const std::vector<Var>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p->grad.empty()) continue;
    for (std::int64_t i = 0; i < p->grad.size(); ++i) sq += p->grad[i] * p->grad[i];
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (p->grad.empty()) continue;
      for (std::int64_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= s;
    }
  }
  return norm;
}

}  // namespace sketchkp
