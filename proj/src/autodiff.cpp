#include "trifuse/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace trifuse::ad {

namespace {

thread_local bool g_grad_enabled = true;

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

Var make_op(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool need = false;
    for (const auto& p : parents) need = need || p->requires_grad;
    if (need) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(n));
}

bool wants(const NodePtr& p) { return p->requires_grad; }

Tensor& gbuf(const NodePtr& p) { return p->ensure_grad(); }

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void Var::backward() const {
  if (!node_ || node_->value.size() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size()) n->backward_fn(*n);
  }
}

// ---------- elementwise ----------

Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor v(a.shape());
  v.array() = a.value().array() + b.value().array();
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(v), {pa, pb}, [pa, pb](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad.array();
    if (wants(pb)) gbuf(pb).array() += self.grad.array();
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor v(a.shape());
  v.array() = a.value().array() - b.value().array();
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(v), {pa, pb}, [pa, pb](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad.array();
    if (wants(pb)) gbuf(pb).array() -= self.grad.array();
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor v(a.shape());
  v.array() = a.value().array() * b.value().array();
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(v), {pa, pb}, [pa, pb](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad.array() * pb->value.array();
    if (wants(pb)) gbuf(pb).array() += self.grad.array() * pa->value.array();
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "div");
  Tensor v(a.shape());
  v.array() = a.value().array() / b.value().array();
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(v), {pa, pb}, [pa, pb](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad.array() / pb->value.array();
    if (wants(pb))
      gbuf(pb).array() -= self.grad.array() * pa->value.array() /
                          (pb->value.array() * pb->value.array());
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  Tensor v(a.shape());
  v.array() = a.value().array() * s;
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa, s](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad.array() * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor v(a.shape());
  v.array() = a.value().array() + s;
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad.array();
  });
}

Var relu(const Var& a) {
  Tensor v(a.shape());
  v.array() = a.value().array().max(0.0);
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa](Node& self) {
    if (wants(pa))
      gbuf(pa).array() +=
          self.grad.array() * (pa->value.array() > 0.0).cast<double>();
  });
}

Var sigmoid(const Var& a) {
  Tensor v(a.shape());
  v.array() = 1.0 / (1.0 + (-a.value().array()).exp());
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa](Node& self) {
    if (wants(pa))
      gbuf(pa).array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
  });
}

Var tanh(const Var& a) {
  Tensor v(a.shape());
  v.array() = a.value().array().tanh();
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa](Node& self) {
    if (wants(pa))
      gbuf(pa).array() += self.grad.array() * (1.0 - self.value.array() * self.value.array());
  });
}

// ---------- reductions ----------

Var sum(const Var& a) {
  Tensor v({1});
  v[0] = a.value().array().sum();
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  Tensor v({1});
  v[0] = a.value().array().sum() / n;
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa, n](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad[0] / n;
  });
}

// ---------- shape ----------

Var reshape(const Var& a, std::vector<int> shape) {
  if (Tensor::count(shape) != a.value().size())
    throw std::invalid_argument("reshape: element count mismatch");
  Tensor v(std::move(shape));
  v.array() = a.value().array();
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad.array();
  });
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
  int total = 0;
  const auto& s0 = xs[0].shape();
  for (const Var& x : xs) {
    if (x.shape().size() != 4 || x.shape()[1] != s0[1] || x.shape()[2] != s0[2] ||
        x.shape()[3] != s0[3])
      throw std::invalid_argument("concat_channels: spatial shape mismatch");
    total += x.shape()[0];
  }
  Tensor v({total, s0[1], s0[2], s0[3]});
  std::vector<NodePtr> parents;
  std::int64_t off = 0;
  for (const Var& x : xs) {
    std::copy(x.value().data(), x.value().data() + x.value().size(), v.data() + off);
    off += x.value().size();
    parents.push_back(x.node());
  }
  auto ps = parents;
  return make_op(std::move(v), std::move(parents), [ps](Node& self) {
    std::int64_t o = 0;
    for (const auto& p : ps) {
      const std::int64_t n = p->value.size();
      if (wants(p)) {
        Tensor& g = gbuf(p);
        for (std::int64_t i = 0; i < n; ++i) g[i] += self.grad[o + i];
      }
      o += n;
    }
  });
}

Var slice_channels(const Var& x, int first, int count) {
  const auto& s = x.shape();
  if (s.size() != 4 || first < 0 || first + count > s[0])
    throw std::invalid_argument("slice_channels: bad range");
  const std::int64_t spatial = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  Tensor v({count, s[1], s[2], s[3]});
  std::copy(x.value().data() + first * spatial, x.value().data() + (first + count) * spatial,
            v.data());
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, first, spatial](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) g[first * spatial + i] += self.grad[i];
  });
}

Var broadcast_to_volume(const Var& v, int d, int h, int w) {
  if (v.shape().size() != 1) throw std::invalid_argument("broadcast_to_volume: expected vector");
  const int S = v.shape()[0];
  const std::int64_t spatial = static_cast<std::int64_t>(d) * h * w;
  Tensor out({S, d, h, w});
  for (int c = 0; c < S; ++c)
    std::fill(out.data() + c * spatial, out.data() + (c + 1) * spatial, v.value()[c]);
  auto pa = v.node();
  return make_op(std::move(out), {pa}, [pa, S, spatial](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (int c = 0; c < S; ++c) {
      double acc = 0.0;
      const double* gp = self.grad.data() + c * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) acc += gp[i];
      g[c] += acc;
    }
  });
}

// ---------- broadcasting products ----------

Var mul_channels(const Var& x, const Var& g) {
  const auto& s = x.shape();
  if (s.size() != 4 || g.shape() != std::vector<int>{s[0]})
    throw std::invalid_argument("mul_channels: expected (C,D,H,W) and (C)");
  const std::int64_t spatial = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  Tensor v(s);
  for (int c = 0; c < s[0]; ++c) {
    const double gc = g.value()[c];
    const double* xp = x.value().data() + c * spatial;
    double* vp = v.data() + c * spatial;
    for (std::int64_t i = 0; i < spatial; ++i) vp[i] = xp[i] * gc;
  }
  auto px = x.node(), pg = g.node();
  return make_op(std::move(v), {px, pg}, [px, pg, spatial](Node& self) {
    const int C = px->value.shape()[0];
    for (int c = 0; c < C; ++c) {
      const double* gr = self.grad.data() + c * spatial;
      if (wants(px)) {
        double* xd = gbuf(px).data() + c * spatial;
        const double gc = pg->value[c];
        for (std::int64_t i = 0; i < spatial; ++i) xd[i] += gr[i] * gc;
      }
      if (wants(pg)) {
        const double* xp = px->value.data() + c * spatial;
        double acc = 0.0;
        for (std::int64_t i = 0; i < spatial; ++i) acc += gr[i] * xp[i];
        gbuf(pg)[c] += acc;
      }
    }
  });
}

Var mul_spatial(const Var& x, const Var& a) {
  const auto& s = x.shape();
  if (s.size() != 4 || a.shape() != std::vector<int>{1, s[1], s[2], s[3]})
    throw std::invalid_argument("mul_spatial: expected (C,D,H,W) and (1,D,H,W)");
  const std::int64_t spatial = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  Tensor v(s);
  for (int c = 0; c < s[0]; ++c) {
    const double* xp = x.value().data() + c * spatial;
    double* vp = v.data() + c * spatial;
    const double* ap = a.value().data();
    for (std::int64_t i = 0; i < spatial; ++i) vp[i] = xp[i] * ap[i];
  }
  auto px = x.node(), pa = a.node();
  return make_op(std::move(v), {px, pa}, [px, pa, spatial](Node& self) {
    const int C = px->value.shape()[0];
    const double* ap = pa->value.data();
    for (int c = 0; c < C; ++c) {
      const double* gr = self.grad.data() + c * spatial;
      if (wants(px)) {
        double* xd = gbuf(px).data() + c * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) xd[i] += gr[i] * ap[i];
      }
      if (wants(pa)) {
        const double* xp = px->value.data() + c * spatial;
        double* ad = gbuf(pa).data();
        for (std::int64_t i = 0; i < spatial; ++i) ad[i] += gr[i] * xp[i];
      }
    }
  });
}

Var affine_channels(const Var& x, const Var& s, const Var& t) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || s.shape() != std::vector<int>{xs[0]} || t.shape() != std::vector<int>{xs[0]})
    throw std::invalid_argument("affine_channels: expected (C,D,H,W), (C), (C)");
  const std::int64_t spatial = static_cast<std::int64_t>(xs[1]) * xs[2] * xs[3];
  Tensor v(xs);
  for (int c = 0; c < xs[0]; ++c) {
    const double sc = s.value()[c], tc = t.value()[c];
    const double* xp = x.value().data() + c * spatial;
    double* vp = v.data() + c * spatial;
    for (std::int64_t i = 0; i < spatial; ++i) vp[i] = xp[i] * sc + tc;
  }
  auto px = x.node(), ps = s.node(), pt = t.node();
  return make_op(std::move(v), {px, ps, pt}, [px, ps, pt, spatial](Node& self) {
    const int C = px->value.shape()[0];
    for (int c = 0; c < C; ++c) {
      const double* gr = self.grad.data() + c * spatial;
      if (wants(px)) {
        double* xd = gbuf(px).data() + c * spatial;
        const double sc = ps->value[c];
        for (std::int64_t i = 0; i < spatial; ++i) xd[i] += gr[i] * sc;
      }
      if (wants(ps)) {
        const double* xp = px->value.data() + c * spatial;
        double acc = 0.0;
        for (std::int64_t i = 0; i < spatial; ++i) acc += gr[i] * xp[i];
        gbuf(ps)[c] += acc;
      }
      if (wants(pt)) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < spatial; ++i) acc += gr[i];
        gbuf(pt)[c] += acc;
      }
    }
  });
}

// ---------- linear algebra ----------

Var matmul(const Var& a, const Var& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw std::invalid_argument("matmul: incompatible shapes");
  Tensor v({sa[0], sb[1]});
  MapRM(v.data(), sa[0], sb[1]).noalias() =
      CMapRM(a.value().data(), sa[0], sa[1]) * CMapRM(b.value().data(), sb[0], sb[1]);
  auto pa = a.node(), pb = b.node();
  return make_op(std::move(v), {pa, pb}, [pa, pb](Node& self) {
    const auto& sa2 = pa->value.shape();
    const auto& sb2 = pb->value.shape();
    CMapRM g(self.grad.data(), sa2[0], sb2[1]);
    if (wants(pa))
      MapRM(gbuf(pa).data(), sa2[0], sa2[1]).noalias() +=
          g * CMapRM(pb->value.data(), sb2[0], sb2[1]).transpose();
    if (wants(pb))
      MapRM(gbuf(pb).data(), sb2[0], sb2[1]).noalias() +=
          CMapRM(pa->value.data(), sa2[0], sa2[1]).transpose() * g;
  });
}

Var transpose(const Var& a) {
  const auto& s = a.shape();
  if (s.size() != 2) throw std::invalid_argument("transpose: expected matrix");
  Tensor v({s[1], s[0]});
  MapRM(v.data(), s[1], s[0]) = CMapRM(a.value().data(), s[0], s[1]).transpose();
  auto pa = a.node();
  return make_op(std::move(v), {pa}, [pa](Node& self) {
    if (!wants(pa)) return;
    const auto& s2 = pa->value.shape();
    MapRM(gbuf(pa).data(), s2[0], s2[1]) +=
        CMapRM(self.grad.data(), s2[1], s2[0]).transpose();
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& sw = w.shape();
  if (x.shape().size() != 1 || sw.size() != 2 || sw[1] != x.shape()[0] ||
      b.shape() != std::vector<int>{sw[0]})
    throw std::invalid_argument("linear: incompatible shapes");
  Tensor v({sw[0]});
  VecMap(v.data(), sw[0]).noalias() =
      CMapRM(w.value().data(), sw[0], sw[1]) * CVecMap(x.value().data(), sw[1]) +
      CVecMap(b.value().data(), sw[0]);
  auto px = x.node(), pw = w.node(), pb = b.node();
  return make_op(std::move(v), {px, pw, pb}, [px, pw, pb](Node& self) {
    const auto& sw2 = pw->value.shape();
    CVecMap g(self.grad.data(), sw2[0]);
    if (wants(px))
      VecMap(gbuf(px).data(), sw2[1]).noalias() +=
          CMapRM(pw->value.data(), sw2[0], sw2[1]).transpose() * g;
    if (wants(pw))
      MapRM(gbuf(pw).data(), sw2[0], sw2[1]).noalias() +=
          g * CVecMap(px->value.data(), sw2[1]).transpose();
    if (wants(pb)) VecMap(gbuf(pb).data(), sw2[0]) += g;
  });
}

Var linear_rows(const Var& x, const Var& w, const Var& b) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  if (sx.size() != 2 || sw.size() != 2 || sw[1] != sx[1] || b.shape() != std::vector<int>{sw[0]})
    throw std::invalid_argument("linear_rows: incompatible shapes");
  const int L = sx[0], N = sx[1], M = sw[0];
  Tensor v({L, M});
  MapRM out(v.data(), L, M);
  out.noalias() = CMapRM(x.value().data(), L, N) * CMapRM(w.value().data(), M, N).transpose();
  out.rowwise() += CVecMap(b.value().data(), M).transpose();
  auto px = x.node(), pw = w.node(), pb = b.node();
  return make_op(std::move(v), {px, pw, pb}, [px, pw, pb, L, N, M](Node& self) {
    CMapRM g(self.grad.data(), L, M);
    if (wants(px))
      MapRM(gbuf(px).data(), L, N).noalias() += g * CMapRM(pw->value.data(), M, N);
    if (wants(pw))
      MapRM(gbuf(pw).data(), M, N).noalias() +=
          g.transpose() * CMapRM(px->value.data(), L, N);
    if (wants(pb)) VecMap(gbuf(pb).data(), M) += g.colwise().sum().transpose();
  });
}

Var slice_cols(const Var& x, int first, int count) {
  const auto& s = x.shape();
  if (s.size() != 2 || first < 0 || first + count > s[1])
    throw std::invalid_argument("slice_cols: bad range");
  Tensor v({s[0], count});
  MapRM(v.data(), s[0], count) =
      CMapRM(x.value().data(), s[0], s[1]).middleCols(first, count);
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, first, count](Node& self) {
    if (!wants(pa)) return;
    const auto& s2 = pa->value.shape();
    MapRM(gbuf(pa).data(), s2[0], s2[1]).middleCols(first, count) +=
        CMapRM(self.grad.data(), s2[0], count);
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int L = xs[0].shape()[0];
  int total = 0;
  for (const Var& x : xs) {
    if (x.shape().size() != 2 || x.shape()[0] != L)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += x.shape()[1];
  }
  Tensor v({L, total});
  MapRM out(v.data(), L, total);
  std::vector<NodePtr> parents;
  int off = 0;
  for (const Var& x : xs) {
    const int n = x.shape()[1];
    out.middleCols(off, n) = CMapRM(x.value().data(), L, n);
    off += n;
    parents.push_back(x.node());
  }
  auto ps = parents;
  return make_op(std::move(v), std::move(parents), [ps, L, total](Node& self) {
    CMapRM g(self.grad.data(), L, total);
    int o = 0;
    for (const auto& p : ps) {
      const int n = p->value.shape()[1];
      if (wants(p)) MapRM(gbuf(p).data(), L, n) += g.middleCols(o, n);
      o += n;
    }
  });
}

Var softmax_rows(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 2) throw std::invalid_argument("softmax_rows: expected matrix");
  Tensor v(s);
  for (int r = 0; r < s[0]; ++r) {
    const double* xr = x.value().data() + static_cast<std::int64_t>(r) * s[1];
    double* vr = v.data() + static_cast<std::int64_t>(r) * s[1];
    double m = xr[0];
    for (int i = 1; i < s[1]; ++i) m = std::max(m, xr[i]);
    double z = 0.0;
    for (int i = 0; i < s[1]; ++i) {
      vr[i] = std::exp(xr[i] - m);
      z += vr[i];
    }
    for (int i = 0; i < s[1]; ++i) vr[i] /= z;
  }
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa](Node& self) {
    if (!wants(pa)) return;
    const auto& s2 = pa->value.shape();
    Tensor& g = gbuf(pa);
    for (int r = 0; r < s2[0]; ++r) {
      const std::int64_t o = static_cast<std::int64_t>(r) * s2[1];
      double dot = 0.0;
      for (int i = 0; i < s2[1]; ++i) dot += self.grad[o + i] * self.value[o + i];
      for (int i = 0; i < s2[1]; ++i)
        g[o + i] += self.value[o + i] * (self.grad[o + i] - dot);
    }
  });
}

Var l2_normalize(const Var& x) {
  const double nrm = std::max(std::sqrt(x.value().array().square().sum()), 1e-12);
  Tensor v(x.shape());
  v.array() = x.value().array() / nrm;
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, nrm](Node& self) {
    if (!wants(pa)) return;
    double dot = 0.0;
    for (std::int64_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.value[i];
    gbuf(pa).array() += (self.grad.array() - self.value.array() * dot) / nrm;
  });
}

// ---------- normalization ----------

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const auto& s = x.shape();
  if (s.size() != 4 || gamma.shape() != std::vector<int>{s[0]} ||
      beta.shape() != std::vector<int>{s[0]})
    throw std::invalid_argument("instance_norm: expected (C,D,H,W) with (C) affine");
  const int C = s[0];
  const std::int64_t ns = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  auto px = x.node(), pg = gamma.node(), pb = beta.node();

  if (ns == 1) {
    // Degenerate spatial extent: standardization would erase the signal, so
    // apply the affine part only.
    Tensor v(s);
    for (int c = 0; c < C; ++c) v[c] = x.value()[c] * gamma.value()[c] + beta.value()[c];
    return make_op(std::move(v), {px, pg, pb}, [px, pg, pb, C](Node& self) {
      for (int c = 0; c < C; ++c) {
        if (wants(px)) gbuf(px)[c] += self.grad[c] * pg->value[c];
        if (wants(pg)) gbuf(pg)[c] += self.grad[c] * px->value[c];
        if (wants(pb)) gbuf(pb)[c] += self.grad[c];
      }
    });
  }

  std::vector<double> mu(C), inv(C);
  Tensor v(s);
  for (int c = 0; c < C; ++c) {
    const double* xp = x.value().data() + c * ns;
    double sum = 0.0, sum2 = 0.0;
    for (std::int64_t i = 0; i < ns; ++i) {
      sum += xp[i];
      sum2 += xp[i] * xp[i];
    }
    mu[c] = sum / static_cast<double>(ns);
    const double var = std::max(0.0, sum2 / static_cast<double>(ns) - mu[c] * mu[c]);
    inv[c] = 1.0 / std::sqrt(var + eps);
    const double gc = gamma.value()[c], bc = beta.value()[c];
    double* vp = v.data() + c * ns;
    for (std::int64_t i = 0; i < ns; ++i) vp[i] = (xp[i] - mu[c]) * inv[c] * gc + bc;
  }
  return make_op(std::move(v), {px, pg, pb},
                 [px, pg, pb, mu, inv, ns, C](Node& self) {
    for (int c = 0; c < C; ++c) {
      const double* xp = px->value.data() + c * ns;
      const double* gr = self.grad.data() + c * ns;
      double gsum = 0.0, gxsum = 0.0;
      for (std::int64_t i = 0; i < ns; ++i) {
        const double xh = (xp[i] - mu[c]) * inv[c];
        gsum += gr[i];
        gxsum += gr[i] * xh;
      }
      if (wants(pg)) gbuf(pg)[c] += gxsum;
      if (wants(pb)) gbuf(pb)[c] += gsum;
      if (wants(px)) {
        double* xd = gbuf(px).data() + c * ns;
        const double gc = pg->value[c];
        const double mg = gsum / static_cast<double>(ns);
        const double mgx = gxsum / static_cast<double>(ns);
        for (std::int64_t i = 0; i < ns; ++i) {
          const double xh = (xp[i] - mu[c]) * inv[c];
          xd[i] += gc * inv[c] * (gr[i] - mg - xh * mgx);
        }
      }
    }
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  std::vector<int> s = x.shape();
  if (s.size() == 1) s = {1, s[0]};
  if (s.size() != 2 || gamma.shape() != std::vector<int>{s[1]} ||
      beta.shape() != std::vector<int>{s[1]})
    throw std::invalid_argument("layer_norm_rows: expected (L,S) with (S) affine");
  const int L = s[0], S = s[1];
  std::vector<double> mu(L), inv(L);
  Tensor v(x.shape());
  for (int r = 0; r < L; ++r) {
    const double* xp = x.value().data() + static_cast<std::int64_t>(r) * S;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < S; ++i) {
      sum += xp[i];
      sum2 += xp[i] * xp[i];
    }
    mu[r] = sum / S;
    const double var = std::max(0.0, sum2 / S - mu[r] * mu[r]);
    inv[r] = 1.0 / std::sqrt(var + eps);
    double* vp = v.data() + static_cast<std::int64_t>(r) * S;
    for (int i = 0; i < S; ++i)
      vp[i] = (xp[i] - mu[r]) * inv[r] * gamma.value()[i] + beta.value()[i];
  }
  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  return make_op(std::move(v), {px, pg, pb}, [px, pg, pb, mu, inv, L, S](Node& self) {
    for (int r = 0; r < L; ++r) {
      const std::int64_t o = static_cast<std::int64_t>(r) * S;
      const double* xp = px->value.data() + o;
      const double* gr = self.grad.data() + o;
      double gsum = 0.0, gxsum = 0.0;
      for (int i = 0; i < S; ++i) {
        const double xh = (xp[i] - mu[r]) * inv[r];
        const double gg = gr[i] * pg->value[i];
        gsum += gg;
        gxsum += gg * xh;
      }
      for (int i = 0; i < S; ++i) {
        const double xh = (xp[i] - mu[r]) * inv[r];
        if (wants(pg)) gbuf(pg)[i] += gr[i] * xh;
        if (wants(pb)) gbuf(pb)[i] += gr[i];
        if (wants(px))
          gbuf(px)[o + i] += inv[r] * (gr[i] * pg->value[i] - gsum / S - xh * gxsum / S);
      }
    }
  });
}

// ---------- convolution ----------

namespace {

struct ConvDims {
  int cin, cout, kd, kh, kw;
  std::array<int, 3> stride, pad;
  int di, hi, wi;  // input spatial
  int dz, dy, dx;  // output spatial
  std::int64_t K() const { return static_cast<std::int64_t>(cin) * kd * kh * kw; }
  std::int64_t N() const { return static_cast<std::int64_t>(dz) * dy * dx; }
};

ConvDims conv_dims(const std::vector<int>& xs, const std::vector<int>& ws,
                   std::array<int, 3> stride, std::array<int, 3> pad) {
  ConvDims d;
  d.cin = xs[0];
  d.di = xs[1];
  d.hi = xs[2];
  d.wi = xs[3];
  d.cout = ws[0];
  d.kd = ws[2];
  d.kh = ws[3];
  d.kw = ws[4];
  d.stride = stride;
  d.pad = pad;
  auto osz = [](int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; };
  d.dz = osz(d.di, d.kd, stride[0], pad[0]);
  d.dy = osz(d.hi, d.kh, stride[1], pad[1]);
  d.dx = osz(d.wi, d.kw, stride[2], pad[2]);
  if (d.dz < 1 || d.dy < 1 || d.dx < 1)
    throw std::invalid_argument("conv3d: kernel larger than padded input");
  return d;
}

// Column-major (K x N): one contiguous column per output voxel.
void im2col(const Tensor& x, const ConvDims& d, Eigen::MatrixXd& col) {
  col.resize(d.K(), d.N());
  std::int64_t n = 0;
  for (int zo = 0; zo < d.dz; ++zo)
    for (int yo = 0; yo < d.dy; ++yo)
      for (int xo = 0; xo < d.dx; ++xo, ++n) {
        double* cp = col.data() + n * d.K();
        const int z0 = zo * d.stride[0] - d.pad[0];
        const int y0 = yo * d.stride[1] - d.pad[1];
        const int x0 = xo * d.stride[2] - d.pad[2];
        std::int64_t r = 0;
        for (int ci = 0; ci < d.cin; ++ci) {
          const double* xc =
              x.data() + static_cast<std::int64_t>(ci) * d.di * d.hi * d.wi;
          for (int kz = 0; kz < d.kd; ++kz) {
            const int zi = z0 + kz;
            for (int ky = 0; ky < d.kh; ++ky) {
              const int yi = y0 + ky;
              const bool row_ok = zi >= 0 && zi < d.di && yi >= 0 && yi < d.hi;
              const double* xr = xc + (static_cast<std::int64_t>(zi) * d.hi + yi) * d.wi;
              for (int kx = 0; kx < d.kw; ++kx, ++r) {
                const int xi = x0 + kx;
                cp[r] = (row_ok && xi >= 0 && xi < d.wi) ? xr[xi] : 0.0;
              }
            }
          }
        }
      }
}

void col2im_add(const Eigen::MatrixXd& col, const ConvDims& d, Tensor& dx) {
  std::int64_t n = 0;
  for (int zo = 0; zo < d.dz; ++zo)
    for (int yo = 0; yo < d.dy; ++yo)
      for (int xo = 0; xo < d.dx; ++xo, ++n) {
        const double* cp = col.data() + n * d.K();
        const int z0 = zo * d.stride[0] - d.pad[0];
        const int y0 = yo * d.stride[1] - d.pad[1];
        const int x0 = xo * d.stride[2] - d.pad[2];
        std::int64_t r = 0;
        for (int ci = 0; ci < d.cin; ++ci) {
          double* xc = dx.data() + static_cast<std::int64_t>(ci) * d.di * d.hi * d.wi;
          for (int kz = 0; kz < d.kd; ++kz) {
            const int zi = z0 + kz;
            for (int ky = 0; ky < d.kh; ++ky) {
              const int yi = y0 + ky;
              const bool row_ok = zi >= 0 && zi < d.di && yi >= 0 && yi < d.hi;
              double* xr = xc + (static_cast<std::int64_t>(zi) * d.hi + yi) * d.wi;
              for (int kx = 0; kx < d.kw; ++kx, ++r) {
                const int xi = x0 + kx;
                if (row_ok && xi >= 0 && xi < d.wi) xr[xi] += cp[r];
              }
            }
          }
        }
      }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, std::array<int, 3> stride,
           std::array<int, 3> pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 5 || ws[1] != xs[0] || b.shape() != std::vector<int>{ws[0]})
    throw std::invalid_argument("conv3d: incompatible shapes x" + x.value().shape_string() +
                                " w" + w.value().shape_string());
  const ConvDims d = conv_dims(xs, ws, stride, pad);

  // pointwise convolution: the column matrix is the input itself
  const bool pointwise = d.kd == 1 && d.kh == 1 && d.kw == 1 && stride == std::array<int, 3>{1, 1, 1} &&
                         pad == std::array<int, 3>{0, 0, 0};
  if (pointwise) {
    Tensor v({d.cout, d.dz, d.dy, d.dx});
    MapRM out(v.data(), d.cout, d.N());
    out.noalias() = CMapRM(w.value().data(), d.cout, d.cin) *
                    CMapRM(x.value().data(), d.cin, d.N());
    out.colwise() += CVecMap(b.value().data(), d.cout);
    auto px = x.node(), pw = w.node(), pb = b.node();
    return make_op(std::move(v), {px, pw, pb}, [px, pw, pb, d](Node& self) {
      CMapRM g(self.grad.data(), d.cout, d.N());
      if (wants(pb)) VecMap(gbuf(pb).data(), d.cout) += g.rowwise().sum();
      if (wants(pw))
        MapRM(gbuf(pw).data(), d.cout, d.cin).noalias() +=
            g * CMapRM(px->value.data(), d.cin, d.N()).transpose();
      if (wants(px))
        MapRM(gbuf(px).data(), d.cin, d.N()).noalias() +=
            CMapRM(pw->value.data(), d.cout, d.cin).transpose() * g;
    });
  }

  Eigen::MatrixXd col;
  im2col(x.value(), d, col);
  Tensor v({d.cout, d.dz, d.dy, d.dx});
  MapRM out(v.data(), d.cout, d.N());
  out.noalias() = CMapRM(w.value().data(), d.cout, d.K()) * col;
  out.colwise() += CVecMap(b.value().data(), d.cout);

  auto px = x.node(), pw = w.node(), pb = b.node();
  return make_op(std::move(v), {px, pw, pb}, [px, pw, pb, d](Node& self) {
    CMapRM g(self.grad.data(), d.cout, d.N());
    if (wants(pb)) VecMap(gbuf(pb).data(), d.cout) += g.rowwise().sum();
    if (wants(pw)) {
      Eigen::MatrixXd col2;
      im2col(px->value, d, col2);
      MapRM(gbuf(pw).data(), d.cout, d.K()).noalias() += g * col2.transpose();
    }
    if (wants(px)) {
      Eigen::MatrixXd dcol(d.K(), d.N());
      dcol.noalias() = CMapRM(pw->value.data(), d.cout, d.K()).transpose() * g;
      col2im_add(dcol, d, gbuf(px));
    }
  });
}

// ---------- resampling ----------

namespace {

struct AxisTaps {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;
};

// align_corners=false sampling: src = (dst + 0.5) * in/out - 0.5, clamped taps.
AxisTaps make_taps(int in, int out) {
  AxisTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w0.resize(out);
  t.w1.resize(out);
  const double r = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double s = (o + 0.5) * r - 0.5;
    const int f = static_cast<int>(std::floor(s));
    const double frac = s - f;
    t.i0[o] = std::clamp(f, 0, in - 1);
    t.i1[o] = std::clamp(f + 1, 0, in - 1);
    t.w0[o] = 1.0 - frac;
    t.w1[o] = frac;
  }
  return t;
}

}  // namespace

Var upsample_trilinear2x(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample_trilinear2x: expected (C,D,H,W)");
  const int C = s[0], D = s[1], H = s[2], W = s[3];
  const int Do = 2 * D, Ho = 2 * H, Wo = 2 * W;
  const AxisTaps tz = make_taps(D, Do), ty = make_taps(H, Ho), tx = make_taps(W, Wo);
  Tensor v({C, Do, Ho, Wo});
  for (int c = 0; c < C; ++c) {
    const double* xc = x.value().data() + static_cast<std::int64_t>(c) * D * H * W;
    double* vc = v.data() + static_cast<std::int64_t>(c) * Do * Ho * Wo;
    for (int z = 0; z < Do; ++z)
      for (int y = 0; y < Ho; ++y)
        for (int xo = 0; xo < Wo; ++xo) {
          double acc = 0.0;
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb)
              for (int cc = 0; cc < 2; ++cc) {
                const int zi = a ? tz.i1[z] : tz.i0[z];
                const int yi = bb ? ty.i1[y] : ty.i0[y];
                const int xi = cc ? tx.i1[xo] : tx.i0[xo];
                const double wgt = (a ? tz.w1[z] : tz.w0[z]) * (bb ? ty.w1[y] : ty.w0[y]) *
                                   (cc ? tx.w1[xo] : tx.w0[xo]);
                acc += wgt * xc[(static_cast<std::int64_t>(zi) * H + yi) * W + xi];
              }
          vc[(static_cast<std::int64_t>(z) * Ho + y) * Wo + xo] = acc;
        }
  }
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, tz, ty, tx, C, D, H, W, Do, Ho, Wo](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (int c = 0; c < C; ++c) {
      double* gc = g.data() + static_cast<std::int64_t>(c) * D * H * W;
      const double* sg = self.grad.data() + static_cast<std::int64_t>(c) * Do * Ho * Wo;
      for (int z = 0; z < Do; ++z)
        for (int y = 0; y < Ho; ++y)
          for (int xo = 0; xo < Wo; ++xo) {
            const double gv = sg[(static_cast<std::int64_t>(z) * Ho + y) * Wo + xo];
            for (int a = 0; a < 2; ++a)
              for (int bb = 0; bb < 2; ++bb)
                for (int cc = 0; cc < 2; ++cc) {
                  const int zi = a ? tz.i1[z] : tz.i0[z];
                  const int yi = bb ? ty.i1[y] : ty.i0[y];
                  const int xi = cc ? tx.i1[xo] : tx.i0[xo];
                  const double wgt = (a ? tz.w1[z] : tz.w0[z]) * (bb ? ty.w1[y] : ty.w0[y]) *
                                     (cc ? tx.w1[xo] : tx.w0[xo]);
                  gc[(static_cast<std::int64_t>(zi) * H + yi) * W + xi] += wgt * gv;
                }
          }
    }
  });
}

Var resize_bilinear2d(const Var& x, int out_h, int out_w) {
  const auto& s = x.shape();
  if (s.size() != 3) throw std::invalid_argument("resize_bilinear2d: expected (C,H,W)");
  const int C = s[0], H = s[1], W = s[2];
  const AxisTaps ty = make_taps(H, out_h), tx = make_taps(W, out_w);
  Tensor v({C, out_h, out_w});
  for (int c = 0; c < C; ++c) {
    const double* xc = x.value().data() + static_cast<std::int64_t>(c) * H * W;
    double* vc = v.data() + static_cast<std::int64_t>(c) * out_h * out_w;
    for (int y = 0; y < out_h; ++y)
      for (int xo = 0; xo < out_w; ++xo)
        vc[static_cast<std::int64_t>(y) * out_w + xo] =
            ty.w0[y] * (tx.w0[xo] * xc[static_cast<std::int64_t>(ty.i0[y]) * W + tx.i0[xo]] +
                        tx.w1[xo] * xc[static_cast<std::int64_t>(ty.i0[y]) * W + tx.i1[xo]]) +
            ty.w1[y] * (tx.w0[xo] * xc[static_cast<std::int64_t>(ty.i1[y]) * W + tx.i0[xo]] +
                        tx.w1[xo] * xc[static_cast<std::int64_t>(ty.i1[y]) * W + tx.i1[xo]]);
  }
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, ty, tx, C, H, W, out_h, out_w](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (int c = 0; c < C; ++c) {
      double* gc = g.data() + static_cast<std::int64_t>(c) * H * W;
      const double* sg = self.grad.data() + static_cast<std::int64_t>(c) * out_h * out_w;
      for (int y = 0; y < out_h; ++y)
        for (int xo = 0; xo < out_w; ++xo) {
          const double gv = sg[static_cast<std::int64_t>(y) * out_w + xo];
          gc[static_cast<std::int64_t>(ty.i0[y]) * W + tx.i0[xo]] += ty.w0[y] * tx.w0[xo] * gv;
          gc[static_cast<std::int64_t>(ty.i0[y]) * W + tx.i1[xo]] += ty.w0[y] * tx.w1[xo] * gv;
          gc[static_cast<std::int64_t>(ty.i1[y]) * W + tx.i0[xo]] += ty.w1[y] * tx.w0[xo] * gv;
          gc[static_cast<std::int64_t>(ty.i1[y]) * W + tx.i1[xo]] += ty.w1[y] * tx.w1[xo] * gv;
        }
    }
  });
}

Var avg_pool2d(const Var& x, int k) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[1] % k != 0 || s[2] % k != 0)
    throw std::invalid_argument("avg_pool2d: spatial dims must divide kernel");
  const int C = s[0], Ho = s[1] / k, Wo = s[2] / k;
  const double inv = 1.0 / (k * k);
  Tensor v({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo) {
        double acc = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            acc += x.value()(c, y * k + dy, xo * k + dx);
        v(c, y, xo) = acc * inv;
      }
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, C, Ho, Wo, k, inv](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xo = 0; xo < Wo; ++xo) {
          const double gv = self.grad(c, y, xo) * inv;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) g(c, y * k + dy, xo * k + dx) += gv;
        }
  });
}

// ---------- feature-map pooling ----------

Var global_avg_pool(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("global_avg_pool: expected (C,D,H,W)");
  const int C = s[0];
  const std::int64_t ns = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  Tensor v({C});
  for (int c = 0; c < C; ++c) {
    const double* xp = x.value().data() + c * ns;
    double acc = 0.0;
    for (std::int64_t i = 0; i < ns; ++i) acc += xp[i];
    v[c] = acc / static_cast<double>(ns);
  }
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, C, ns](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (int c = 0; c < C; ++c) {
      const double gv = self.grad[c] / static_cast<double>(ns);
      double* gp = g.data() + c * ns;
      for (std::int64_t i = 0; i < ns; ++i) gp[i] += gv;
    }
  });
}

Var global_max_pool(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("global_max_pool: expected (C,D,H,W)");
  const int C = s[0];
  const std::int64_t ns = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  Tensor v({C});
  std::vector<std::int64_t> arg(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const double* xp = x.value().data() + c * ns;
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < ns; ++i)
      if (xp[i] > xp[best]) best = i;
    arg[static_cast<std::size_t>(c)] = best;
    v[c] = xp[best];
  }
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, arg, ns, C](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (int c = 0; c < C; ++c) g[c * ns + arg[static_cast<std::size_t>(c)]] += self.grad[c];
  });
}

Var channel_mean(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("channel_mean: expected (C,D,H,W)");
  const int C = s[0];
  const std::int64_t ns = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  Tensor v({1, s[1], s[2], s[3]});
  for (std::int64_t i = 0; i < ns; ++i) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c) acc += x.value()[c * ns + i];
    v[i] = acc / C;
  }
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, C, ns](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (std::int64_t i = 0; i < ns; ++i) {
      const double gv = self.grad[i] / C;
      for (int c = 0; c < C; ++c) g[c * ns + i] += gv;
    }
  });
}

Var channel_max(const Var& x) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("channel_max: expected (C,D,H,W)");
  const int C = s[0];
  const std::int64_t ns = static_cast<std::int64_t>(s[1]) * s[2] * s[3];
  Tensor v({1, s[1], s[2], s[3]});
  std::vector<int> arg(static_cast<std::size_t>(ns));
  for (std::int64_t i = 0; i < ns; ++i) {
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (x.value()[c * ns + i] > x.value()[best * ns + i]) best = c;
    arg[static_cast<std::size_t>(i)] = best;
    v[i] = x.value()[best * ns + i];
  }
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, arg, ns](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (std::int64_t i = 0; i < ns; ++i)
      g[arg[static_cast<std::size_t>(i)] * ns + i] += self.grad[i];
  });
}

// ---------- stochastic / losses ----------

Var dropout(const Var& x, double p, rng_t& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;
  Tensor mask(x.shape());
  std::bernoulli_distribution keep(1.0 - p);
  const double scl = 1.0 / (1.0 - p);
  for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? scl : 0.0;
  Tensor v(x.shape());
  v.array() = x.value().array() * mask.array();
  auto pa = x.node();
  return make_op(std::move(v), {pa}, [pa, mask](Node& self) {
    if (wants(pa)) gbuf(pa).array() += self.grad.array() * mask.array();
  });
}

Var bce_mean(const Var& probs, const Tensor& targets, double eps) {
  check_same_shape(probs.value(), targets, "bce_mean");
  const double n = static_cast<double>(targets.size());
  Tensor v({1});
  v[0] = -((targets.array() * (probs.value().array() + eps).log() +
            (1.0 - targets.array()) * (1.0 - probs.value().array() + eps).log())
               .sum()) /
         n;
  auto pa = probs.node();
  return make_op(std::move(v), {pa}, [pa, targets, eps, n](Node& self) {
    if (!wants(pa)) return;
    gbuf(pa).array() += self.grad[0] / n *
                        (-(targets.array() / (pa->value.array() + eps)) +
                         (1.0 - targets.array()) / (1.0 - pa->value.array() + eps));
  });
}

Var cross_entropy_logits(const Var& logits, int target) {
  const auto& s = logits.shape();
  if (s.size() != 1 || target < 0 || target >= s[0])
    throw std::invalid_argument("cross_entropy_logits: bad target/shape");
  const int K = s[0];
  double m = logits.value()[0];
  for (int i = 1; i < K; ++i) m = std::max(m, logits.value()[i]);
  double z = 0.0;
  for (int i = 0; i < K; ++i) z += std::exp(logits.value()[i] - m);
  Tensor v({1});
  v[0] = std::log(z) + m - logits.value()[target];
  auto pa = logits.node();
  return make_op(std::move(v), {pa}, [pa, target, K, m, z](Node& self) {
    if (!wants(pa)) return;
    Tensor& g = gbuf(pa);
    for (int i = 0; i < K; ++i) {
      const double soft = std::exp(pa->value[i] - m) / z;
      g[i] += self.grad[0] * (soft - (i == target ? 1.0 : 0.0));
    }
  });
}

}  // namespace trifuse::ad
