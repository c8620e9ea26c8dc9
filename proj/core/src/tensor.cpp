#include "bodynerf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

namespace bodynerf {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  BN_CHECK(shape_numel(shape) == static_cast<std::int64_t>(value.size()),
           "tensor: shape ", shape_str(shape), " does not match value count ",
           value.size());
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  return n;
}

NodePtr make_op(const char* op, Shape shape, std::vector<double> value,
                std::vector<NodePtr> parents,
                std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  for (const auto& p : parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
  }
  return n;
}

void accum(Node& p, std::int64_t i, double v) {
  if (!p.requires_grad) return;
  p.ensure_grad();
  p.grad[i] += v;
}

// Right-aligned broadcast of two shapes.
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const int nd = static_cast<int>(std::max(a.size(), b.size()));
  Shape out(nd);
  for (int i = 0; i < nd; ++i) {
    const std::int64_t da =
        i < static_cast<int>(a.size()) ? a[a.size() - 1 - i] : 1;
    const std::int64_t db =
        i < static_cast<int>(b.size()) ? b[b.size() - 1 - i] : 1;
    BN_CHECK(da == db || da == 1 || db == 1, op, ": shapes ", shape_str(a),
             " and ", shape_str(b), " are not broadcastable");
    out[nd - 1 - i] = std::max(da, db);
  }
  return out;
}

// Element strides of `s` expanded to broadcast shape `out` (0 where s has
// extent 1 but out does not).
std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  const int nd = static_cast<int>(out.size());
  std::vector<std::int64_t> st(nd, 0);
  std::int64_t run = 1;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    const int k = static_cast<int>(s.size()) - 1 - i;
    st[nd - 1 - i] = (s[k] == 1 && out[nd - 1 - i] != 1) ? 0 : run;
    run *= s[k];
  }
  return st;
}

// Walks every output element of a broadcast binary op, handing linear source
// indices to `fn(io, ia, ib)`.
template <typename Fn>
void broadcast_walk(const Shape& out, const std::vector<std::int64_t>& sa,
                    const std::vector<std::int64_t>& sb, Fn&& fn) {
  const int nd = static_cast<int>(out.size());
  const std::int64_t n = shape_numel(out);
  if (nd == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(nd, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t io = 0; io < n; ++io) {
    fn(io, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary_op(const char* name, BinOp kind, const Tensor& a,
                 const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape so = broadcast_shape(name, sa, sb);
  const std::int64_t n = shape_numel(so);
  std::vector<double> out(n);
  const auto& va = a.values();
  const auto& vb = b.values();

  if (sa == sb) {
    switch (kind) {
      case BinOp::Add:
        for (std::int64_t i = 0; i < n; ++i) out[i] = va[i] + vb[i];
        break;
      case BinOp::Sub:
        for (std::int64_t i = 0; i < n; ++i) out[i] = va[i] - vb[i];
        break;
      case BinOp::Mul:
        for (std::int64_t i = 0; i < n; ++i) out[i] = va[i] * vb[i];
        break;
      case BinOp::Div:
        for (std::int64_t i = 0; i < n; ++i) out[i] = va[i] / vb[i];
        break;
    }
  } else {
    auto sta = broadcast_strides(sa, so);
    auto stb = broadcast_strides(sb, so);
    broadcast_walk(so, sta, stb,
                   [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
                     switch (kind) {
                       case BinOp::Add: out[io] = va[ia] + vb[ib]; break;
                       case BinOp::Sub: out[io] = va[ia] - vb[ib]; break;
                       case BinOp::Mul: out[io] = va[ia] * vb[ib]; break;
                       case BinOp::Div: out[io] = va[ia] / vb[ib]; break;
                     }
                   });
  }

  Shape so_copy = so;
  auto backward = [kind, so = std::move(so_copy)](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    auto sta = broadcast_strides(pa.shape, so);
    auto stb = broadcast_strides(pb.shape, so);
    broadcast_walk(
        so, sta, stb, [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
          switch (kind) {
            case BinOp::Add:
              accum(pa, ia, g[io]);
              accum(pb, ib, g[io]);
              break;
            case BinOp::Sub:
              accum(pa, ia, g[io]);
              accum(pb, ib, -g[io]);
              break;
            case BinOp::Mul:
              accum(pa, ia, g[io] * pb.value[ib]);
              accum(pb, ib, g[io] * pa.value[ia]);
              break;
            case BinOp::Div: {
              const double bv = pb.value[ib];
              accum(pa, ia, g[io] / bv);
              accum(pb, ib, -g[io] * pa.value[ia] / (bv * bv));
              break;
            }
          }
        });
  };
  return Tensor::wrap(make_op(name, std::move(so), std::move(out),
                              {a.node_ptr(), b.node_ptr()},
                              std::move(backward)));
}

template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
  const std::int64_t n = a.numel();
  std::vector<double> out(n);
  const auto& v = a.values();
  for (std::int64_t i = 0; i < n; ++i) out[i] = f(v[i]);
  auto backward = [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t i = 0; i < self.numel(); ++i)
      p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
  };
  return Tensor::wrap(make_op(name, a.shape(), std::move(out), {a.node_ptr()},
                              std::move(backward)));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor basics

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), 0.0);
  return wrap(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)), fill);
  return wrap(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  return wrap(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

std::int64_t Tensor::dim(int i) const {
  const Shape& s = node().shape;
  BN_CHECK(i >= 0 && i < static_cast<int>(s.size()), "dim index ", i,
           " out of range for shape ", shape_str(s));
  return s[i];
}

std::vector<double>& Tensor::mutable_values() {
  BN_CHECK(node().is_leaf, "mutable_values: only leaves may be edited");
  return node().value;
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  const Shape& s = node().shape;
  BN_CHECK(idx.size() == s.size(), "at: rank mismatch");
  std::int64_t flat = 0;
  int d = 0;
  for (auto i : idx) {
    BN_CHECK(i >= 0 && i < s[d], "at: index out of range");
    flat = flat * s[d] + i;
    ++d;
  }
  return node().value[flat];
}

double Tensor::scalar_value() const {
  BN_CHECK(numel() == 1, "scalar_value: tensor has shape ",
           shape_str(shape()));
  return node().value[0];
}

const std::vector<double>& Tensor::grad() const {
  BN_CHECK(!node().grad.empty(), "grad: no gradient present");
  return node().grad;
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
  BN_CHECK(static_cast<std::int64_t>(g.size()) == numel(),
           "accumulate_grad: size mismatch");
  node().ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) node().grad[i] += g[i];
}

Tensor Tensor::detach() const {
  return from_values(shape(), values(), false);
}

void Tensor::backward() {
  BN_CHECK(numel() == 1, "backward: loss must be scalar, got shape ",
           shape_str(shape()));
  BN_CHECK(requires_grad(), "backward: loss does not require grad");
  BN_CHECK(node().is_leaf || node().backward_fn,
           "backward: tape already consumed");

  // Post-order DFS over the ancestry of the loss; `order` owns the nodes so
  // that releasing parent links below cannot free anything still in use.
  std::vector<NodePtr> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    NodePtr n;
    size_t next = 0;
  };
  std::vector<Frame> stack;
  visited.insert(node_.get());
  stack.push_back({node_, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      NodePtr p = f.n->parents[f.next++];
      if (p->requires_grad && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.push_back({std::move(p), 0});
      }
    } else {
      order.push_back(std::move(stack.back().n));
      stack.pop_back();
    }
  }

  node().ensure_grad();
  node().grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
    if (!n.is_leaf) {
      n.grad.clear();
      n.backward_fn = nullptr;
      n.parents.clear();
    }
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op("add", BinOp::Add, a, b);
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op("sub", BinOp::Sub, a, b);
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op("mul", BinOp::Mul, a, b);
}
Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op("div", BinOp::Div, a, b);
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(
      "scale", a, [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      "add_scalar", a, [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      "neg", a, [](double x) { return -x; },
      [](double, double) { return -1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Tensor sin(const Tensor& a) {
  return unary_op(
      "sin", a, [](double x) { return std::sin(x); },
      [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary_op(
      "cos", a, [](double x) { return std::cos(x); },
      [](double x, double) { return -std::sin(x); });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

// ---------------------------------------------------------------------------
// Linear algebra / reductions / shape

Tensor matmul(const Tensor& a, const Tensor& b) {
  BN_CHECK(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
           "matmul: incompatible shapes ", shape_str(a.shape()), " and ",
           shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  const auto& va = a.values();
  const auto& vb = b.values();
  for (std::int64_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = va.data() + i * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = vb.data() + kk * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto backward = [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      pa.ensure_grad();
      // dA = G * B^T
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t kk = 0; kk < k; ++kk) {
          double s = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = pb.value.data() + kk * n;
          for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          pa.grad[i * k + kk] += s;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      // dB = A^T * G
      for (std::int64_t kk = 0; kk < k; ++kk)
        for (std::int64_t i = 0; i < m; ++i) {
          const double av = pa.value[i * k + kk];
          if (av == 0.0) continue;
          const double* grow = g.data() + i * n;
          double* brow = pb.grad.data() + kk * n;
          for (std::int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
    }
  };
  return Tensor::wrap(make_op("matmul", {m, n}, std::move(out),
                              {a.node_ptr(), b.node_ptr()},
                              std::move(backward)));
}

Tensor softmax_last(const Tensor& a) {
  BN_CHECK(a.ndim() >= 1, "softmax_last: needs at least one axis");
  const std::int64_t cols = a.shape().back();
  const std::int64_t rows = a.numel() / cols;
  std::vector<double> out(a.numel());
  const auto& v = a.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = v.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = x[0];
    for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t c = 0; c < cols; ++c) y[c] *= inv;
  }
  auto backward = [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      double* d = p.grad.data() + r * cols;
      for (std::int64_t c = 0; c < cols; ++c) d[c] += y[c] * (g[c] - dot);
    }
  };
  return Tensor::wrap(make_op("softmax_last", a.shape(), std::move(out),
                              {a.node_ptr()}, std::move(backward)));
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto backward = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = self.grad[0];
    for (auto& d : p.grad) d += g;
  };
  return Tensor::wrap(
      make_op("sum_all", {1}, {s}, {a.node_ptr()}, std::move(backward)));
}

Tensor mean_all(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto backward = [n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const double g = self.grad[0] / n;
    for (auto& d : p.grad) d += g;
  };
  return Tensor::wrap(
      make_op("mean_all", {1}, {s / n}, {a.node_ptr()}, std::move(backward)));
}

Tensor sum_axis(const Tensor& a, int axis) {
  const Shape& s = a.shape();
  BN_CHECK(axis >= 0 && axis < a.ndim(), "sum_axis: axis ", axis,
           " out of range for shape ", shape_str(s));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < a.ndim(); ++i) inner *= s[i];
  const std::int64_t ax = s[axis];
  Shape so;
  for (int i = 0; i < a.ndim(); ++i)
    if (i != axis) so.push_back(s[i]);
  if (so.empty()) so.push_back(1);
  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  const auto& v = a.values();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t x = 0; x < ax; ++x) {
      const double* src = v.data() + (o * ax + x) * inner;
      double* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  auto backward = [outer, inner, ax](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t x = 0; x < ax; ++x) {
        double* dst = p.grad.data() + (o * ax + x) * inner;
        const double* g = self.grad.data() + o * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += g[i];
      }
  };
  return Tensor::wrap(make_op("sum_axis", std::move(so), std::move(out),
                              {a.node_ptr()}, std::move(backward)));
}

Tensor reshape(const Tensor& a, Shape shape) {
  BN_CHECK(shape_numel(shape) == a.numel(), "reshape: cannot view ",
           shape_str(a.shape()), " as ", shape_str(shape));
  auto backward = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t i = 0; i < self.numel(); ++i) p.grad[i] += self.grad[i];
  };
  return Tensor::wrap(make_op("reshape", std::move(shape), a.values(),
                              {a.node_ptr()}, std::move(backward)));
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  BN_CHECK(!parts.empty(), "concat: empty input list");
  const int nd = parts[0].ndim();
  BN_CHECK(axis >= 0 && axis < nd, "concat: axis ", axis,
           " out of range for rank ", nd);
  Shape so = parts[0].shape();
  std::int64_t total_axis = 0;
  for (const auto& p : parts) {
    BN_CHECK(p.ndim() == nd, "concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis)
        BN_CHECK(p.dim(d) == so[d], "concat: shape mismatch ",
                 shape_str(p.shape()), " vs ", shape_str(so), " on axis ", d);
    total_axis += p.dim(axis);
  }
  so[axis] = total_axis;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= so[i];
  for (int i = axis + 1; i < nd; ++i) inner *= so[i];

  std::vector<double> out(static_cast<size_t>(shape_numel(so)));
  std::vector<std::int64_t> blocks;  // per-part axis extent * inner
  for (const auto& p : parts) blocks.push_back(p.dim(axis) * inner);
  const std::int64_t row = total_axis * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
      const auto& v = parts[pi].values();
      std::memcpy(out.data() + o * row + off, v.data() + o * blocks[pi],
                  sizeof(double) * blocks[pi]);
      off += blocks[pi];
    }
  }
  std::vector<NodePtr> ps;
  for (const auto& p : parts) ps.push_back(p.node_ptr());
  auto backward = [outer, row, blocks](Node& self) {
    std::int64_t off = 0;
    for (size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node& p = *self.parents[pi];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* g = self.grad.data() + o * row + off;
          double* d = p.grad.data() + o * blocks[pi];
          for (std::int64_t i = 0; i < blocks[pi]; ++i) d[i] += g[i];
        }
      }
      off += blocks[pi];
    }
  };
  return Tensor::wrap(make_op("concat", std::move(so), std::move(out),
                              std::move(ps), std::move(backward)));
}

// ---------------------------------------------------------------------------
// Indexed ops

Tensor gather_rows(const Tensor& a, std::vector<std::int64_t> idx) {
  BN_CHECK(a.ndim() >= 1, "gather_rows: rank 0 input");
  const std::int64_t rows = a.dim(0);
  const std::int64_t rowsz = a.numel() / std::max<std::int64_t>(rows, 1);
  for (auto i : idx)
    BN_CHECK(i >= 0 && i < rows, "gather_rows: index ", i,
             " out of range for ", rows, " rows");
  Shape so = a.shape();
  so[0] = static_cast<std::int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(so[0] * rowsz));
  const auto& v = a.values();
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * rowsz, v.data() + idx[r] * rowsz,
                sizeof(double) * rowsz);
  auto backward = [rowsz, idx = std::move(idx)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      const double* g = self.grad.data() + r * rowsz;
      double* d = p.grad.data() + idx[r] * rowsz;
      for (std::int64_t i = 0; i < rowsz; ++i) d[i] += g[i];
    }
  };
  return Tensor::wrap(make_op("gather_rows", std::move(so), std::move(out),
                              {a.node_ptr()}, std::move(backward)));
}

Tensor scatter_add_rows(const Tensor& src, std::vector<std::int64_t> idx,
                        std::int64_t out_rows) {
  BN_CHECK(src.ndim() >= 1, "scatter_add_rows: rank 0 input");
  BN_CHECK(static_cast<std::int64_t>(idx.size()) == src.dim(0),
           "scatter_add_rows: ", idx.size(), " indices for ", src.dim(0),
           " rows");
  const std::int64_t rowsz =
      src.numel() / std::max<std::int64_t>(src.dim(0), 1);
  for (auto i : idx)
    BN_CHECK(i >= 0 && i < out_rows, "scatter_add_rows: index ", i,
             " out of range for ", out_rows, " rows");
  Shape so = src.shape();
  so[0] = out_rows;
  std::vector<double> out(static_cast<size_t>(out_rows * rowsz), 0.0);
  const auto& v = src.values();
  for (size_t r = 0; r < idx.size(); ++r) {
    const double* s = v.data() + r * rowsz;
    double* d = out.data() + idx[r] * rowsz;
    for (std::int64_t i = 0; i < rowsz; ++i) d[i] += s[i];
  }
  auto backward = [rowsz, idx = std::move(idx)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      const double* g = self.grad.data() + idx[r] * rowsz;
      double* d = p.grad.data() + r * rowsz;
      for (std::int64_t i = 0; i < rowsz; ++i) d[i] += g[i];
    }
  };
  return Tensor::wrap(make_op("scatter_add_rows", std::move(so),
                              std::move(out), {src.node_ptr()},
                              std::move(backward)));
}

// ---------------------------------------------------------------------------
// Spatial ops

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad) {
  BN_CHECK(x.ndim() == 4, "conv2d: input must be (N,C,H,W), got ",
           shape_str(x.shape()));
  BN_CHECK(w.ndim() == 4, "conv2d: weight must be (Co,Ci,kh,kw), got ",
           shape_str(w.shape()));
  BN_CHECK(x.dim(1) == w.dim(1), "conv2d: channel mismatch ",
           shape_str(x.shape()), " vs ", shape_str(w.shape()));
  BN_CHECK(bias.ndim() == 1 && bias.dim(0) == w.dim(0),
           "conv2d: bias must be (Co)");
  BN_CHECK(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const std::int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  BN_CHECK(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");

  std::vector<double> out(static_cast<size_t>(N * Co * Ho * Wo), 0.0);
  const auto& vx = x.values();
  const auto& vw = w.values();
  const auto& vb = bias.values();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t co = 0; co < Co; ++co)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          double s = vb[co];
          for (std::int64_t ci = 0; ci < Ci; ++ci)
            for (std::int64_t ky = 0; ky < kh; ++ky) {
              const std::int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              const double* xrow = vx.data() + ((n * Ci + ci) * H + iy) * W;
              const double* wrow =
                  vw.data() + ((co * Ci + ci) * kh + ky) * kw;
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const std::int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                s += xrow[ix] * wrow[kx];
              }
            }
          out[((n * Co + co) * Ho + oy) * Wo + ox] = s;
        }

  auto backward = [N, Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    const auto& g = self.grad;
    if (px.requires_grad) px.ensure_grad();
    if (pw.requires_grad) pw.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t co = 0; co < Co; ++co)
        for (std::int64_t oy = 0; oy < Ho; ++oy)
          for (std::int64_t ox = 0; ox < Wo; ++ox) {
            const double gv = g[((n * Co + co) * Ho + oy) * Wo + ox];
            if (gv == 0.0) continue;
            if (pb.requires_grad) pb.grad[co] += gv;
            for (std::int64_t ci = 0; ci < Ci; ++ci)
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                const std::int64_t xoff = ((n * Ci + ci) * H + iy) * W;
                const std::int64_t woff = ((co * Ci + ci) * kh + ky) * kw;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  if (pw.requires_grad)
                    pw.grad[woff + kx] += gv * px.value[xoff + ix];
                  if (px.requires_grad)
                    px.grad[xoff + ix] += gv * pw.value[woff + kx];
                }
              }
          }
  };
  return Tensor::wrap(make_op("conv2d", {N, Co, Ho, Wo}, std::move(out),
                              {x.node_ptr(), w.node_ptr(), bias.node_ptr()},
                              std::move(backward)));
}

Tensor maxpool2d(const Tensor& x, int k, int stride) {
  BN_CHECK(x.ndim() == 4, "maxpool2d: input must be (N,C,H,W), got ",
           shape_str(x.shape()));
  BN_CHECK(k >= 1 && stride >= 1, "maxpool2d: bad kernel/stride");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = (H - k) / stride + 1;
  const std::int64_t Wo = (W - k) / stride + 1;
  BN_CHECK(Ho >= 1 && Wo >= 1, "maxpool2d: window larger than input");
  std::vector<double> out(static_cast<size_t>(N * C * Ho * Wo));
  std::vector<std::int64_t> arg(out.size());
  const auto& v = x.values();
  std::int64_t o = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t oy = 0; oy < Ho; ++oy)
        for (std::int64_t ox = 0; ox < Wo; ++ox, ++o) {
          double best = -1e308;
          std::int64_t bi = -1;
          for (std::int64_t ky = 0; ky < k; ++ky)
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t iy = oy * stride + ky;
              const std::int64_t ix = ox * stride + kx;
              const std::int64_t ii = ((n * C + c) * H + iy) * W + ix;
              if (v[ii] > best) {
                best = v[ii];
                bi = ii;
              }
            }
          out[o] = best;
          arg[o] = bi;
        }
  auto backward = [arg = std::move(arg)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < arg.size(); ++i) p.grad[arg[i]] += self.grad[i];
  };
  return Tensor::wrap(make_op("maxpool2d", {N, C, Ho, Wo}, std::move(out),
                              {x.node_ptr()}, std::move(backward)));
}

Tensor upsample_nearest2d(const Tensor& x, int factor) {
  BN_CHECK(x.ndim() == 4, "upsample_nearest2d: input must be (N,C,H,W)");
  BN_CHECK(factor >= 1, "upsample_nearest2d: factor must be >= 1");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = H * factor, Wo = W * factor;
  std::vector<double> out(static_cast<size_t>(N * C * Ho * Wo));
  const auto& v = x.values();
  for (std::int64_t nc = 0; nc < N * C; ++nc)
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      const double* src = v.data() + (nc * H + oy / factor) * W;
      double* dst = out.data() + (nc * Ho + oy) * Wo;
      for (std::int64_t ox = 0; ox < Wo; ++ox) dst[ox] = src[ox / factor];
    }
  auto backward = [N, C, H, W, Ho, Wo, factor](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t nc = 0; nc < N * C; ++nc)
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        double* dst = p.grad.data() + (nc * H + oy / factor) * W;
        const double* g = self.grad.data() + (nc * Ho + oy) * Wo;
        for (std::int64_t ox = 0; ox < Wo; ++ox) dst[ox / factor] += g[ox];
      }
  };
  return Tensor::wrap(make_op("upsample_nearest2d", {N, C, Ho, Wo},
                              std::move(out), {x.node_ptr()},
                              std::move(backward)));
}

Tensor chw_to_hwc(const Tensor& x) {
  BN_CHECK(x.ndim() == 3, "chw_to_hwc: input must be (C,H,W), got ",
           shape_str(x.shape()));
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<double> out(static_cast<size_t>(C * H * W));
  const auto& v = x.values();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx)
        out[(y * W + xx) * C + c] = v[(c * H + y) * W + xx];
  auto backward = [C, H, W](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t xx = 0; xx < W; ++xx)
          p.grad[(c * H + y) * W + xx] += self.grad[(y * W + xx) * C + c];
  };
  return Tensor::wrap(make_op("chw_to_hwc", {H, W, C}, std::move(out),
                              {x.node_ptr()}, std::move(backward)));
}

namespace {
// Shared clamped-axis setup for the interpolating samplers.
struct AxisSample {
  std::int64_t lo;    // lower node index
  double frac;        // fraction toward lo+1
  bool interior;      // coordinate landed inside [0, extent-1]
};

AxisSample axis_sample(double coord, std::int64_t extent) {
  AxisSample s;
  s.interior = coord >= 0.0 && coord <= static_cast<double>(extent - 1);
  double c = std::min(std::max(coord, 0.0), static_cast<double>(extent - 1));
  if (extent == 1) {
    s.lo = 0;
    s.frac = 0.0;
    s.interior = false;  // no gradient along a degenerate axis
    return s;
  }
  s.lo = std::min(static_cast<std::int64_t>(std::floor(c)), extent - 2);
  s.frac = c - static_cast<double>(s.lo);
  return s;
}
}  // namespace

Tensor bilinear_sample(const Tensor& fmap, const Tensor& pts) {
  BN_CHECK(fmap.ndim() == 3, "bilinear_sample: fmap must be (H,W,C), got ",
           shape_str(fmap.shape()));
  BN_CHECK(pts.ndim() == 2 && pts.dim(1) == 2,
           "bilinear_sample: pts must be (B,2), got ", shape_str(pts.shape()));
  const std::int64_t H = fmap.dim(0), W = fmap.dim(1), C = fmap.dim(2);
  const std::int64_t B = pts.dim(0);
  std::vector<double> out(static_cast<size_t>(B * C), 0.0);
  const auto& vf = fmap.values();
  const auto& vp = pts.values();
  for (std::int64_t b = 0; b < B; ++b) {
    const AxisSample ax = axis_sample(vp[b * 2 + 0], W);
    const AxisSample ay = axis_sample(vp[b * 2 + 1], H);
    const double w00 = (1 - ay.frac) * (1 - ax.frac);
    const double w01 = (1 - ay.frac) * ax.frac;
    const double w10 = ay.frac * (1 - ax.frac);
    const double w11 = ay.frac * ax.frac;
    const std::int64_t x1 = std::min(ax.lo + 1, W - 1);
    const std::int64_t y1 = std::min(ay.lo + 1, H - 1);
    const double* f00 = vf.data() + (ay.lo * W + ax.lo) * C;
    const double* f01 = vf.data() + (ay.lo * W + x1) * C;
    const double* f10 = vf.data() + (y1 * W + ax.lo) * C;
    const double* f11 = vf.data() + (y1 * W + x1) * C;
    double* o = out.data() + b * C;
    for (std::int64_t c = 0; c < C; ++c)
      o[c] = w00 * f00[c] + w01 * f01[c] + w10 * f10[c] + w11 * f11[c];
  }
  auto backward = [H, W, C, B](Node& self) {
    Node& pf = *self.parents[0];
    Node& pp = *self.parents[1];
    if (pf.requires_grad) pf.ensure_grad();
    if (pp.requires_grad) pp.ensure_grad();
    for (std::int64_t b = 0; b < B; ++b) {
      const AxisSample ax = axis_sample(pp.value[b * 2 + 0], W);
      const AxisSample ay = axis_sample(pp.value[b * 2 + 1], H);
      const std::int64_t x1 = std::min(ax.lo + 1, W - 1);
      const std::int64_t y1 = std::min(ay.lo + 1, H - 1);
      const std::int64_t i00 = (ay.lo * W + ax.lo) * C;
      const std::int64_t i01 = (ay.lo * W + x1) * C;
      const std::int64_t i10 = (y1 * W + ax.lo) * C;
      const std::int64_t i11 = (y1 * W + x1) * C;
      const double* g = self.grad.data() + b * C;
      if (pf.requires_grad) {
        const double w00 = (1 - ay.frac) * (1 - ax.frac);
        const double w01 = (1 - ay.frac) * ax.frac;
        const double w10 = ay.frac * (1 - ax.frac);
        const double w11 = ay.frac * ax.frac;
        for (std::int64_t c = 0; c < C; ++c) {
          pf.grad[i00 + c] += w00 * g[c];
          pf.grad[i01 + c] += w01 * g[c];
          pf.grad[i10 + c] += w10 * g[c];
          pf.grad[i11 + c] += w11 * g[c];
        }
      }
      if (pp.requires_grad) {
        double dx = 0.0, dy = 0.0;
        for (std::int64_t c = 0; c < C; ++c) {
          const double f00 = pf.value[i00 + c], f01 = pf.value[i01 + c];
          const double f10 = pf.value[i10 + c], f11 = pf.value[i11 + c];
          dx += g[c] * ((1 - ay.frac) * (f01 - f00) + ay.frac * (f11 - f10));
          dy += g[c] * ((1 - ax.frac) * (f10 - f00) + ax.frac * (f11 - f01));
        }
        if (ax.interior) pp.grad[b * 2 + 0] += dx;
        if (ay.interior) pp.grad[b * 2 + 1] += dy;
      }
    }
  };
  return Tensor::wrap(make_op("bilinear_sample", {B, C}, std::move(out),
                              {fmap.node_ptr(), pts.node_ptr()},
                              std::move(backward)));
}

Tensor trilinear_sample(const Tensor& vol, const Tensor& pts) {
  BN_CHECK(vol.ndim() == 4, "trilinear_sample: vol must be (D,H,W,C), got ",
           shape_str(vol.shape()));
  BN_CHECK(pts.ndim() == 2 && pts.dim(1) == 3,
           "trilinear_sample: pts must be (B,3), got ",
           shape_str(pts.shape()));
  const std::int64_t D = vol.dim(0), H = vol.dim(1), W = vol.dim(2),
                     C = vol.dim(3);
  const std::int64_t B = pts.dim(0);
  std::vector<double> out(static_cast<size_t>(B * C), 0.0);
  const auto& vv = vol.values();
  const auto& vp = pts.values();

  auto corner = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return ((z * H + y) * W + x) * C;
  };
  for (std::int64_t b = 0; b < B; ++b) {
    const AxisSample ax = axis_sample(vp[b * 3 + 0], W);
    const AxisSample ay = axis_sample(vp[b * 3 + 1], H);
    const AxisSample az = axis_sample(vp[b * 3 + 2], D);
    const std::int64_t x1 = std::min(ax.lo + 1, W - 1);
    const std::int64_t y1 = std::min(ay.lo + 1, H - 1);
    const std::int64_t z1 = std::min(az.lo + 1, D - 1);
    double* o = out.data() + b * C;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double w = (dz ? az.frac : 1 - az.frac) *
                           (dy ? ay.frac : 1 - ay.frac) *
                           (dx ? ax.frac : 1 - ax.frac);
          if (w == 0.0) continue;
          const double* f = vv.data() + corner(dz ? z1 : az.lo,
                                               dy ? y1 : ay.lo,
                                               dx ? x1 : ax.lo);
          for (std::int64_t c = 0; c < C; ++c) o[c] += w * f[c];
        }
  }
  auto backward = [D, H, W, C, B](Node& self) {
    Node& pv = *self.parents[0];
    Node& pp = *self.parents[1];
    if (pv.requires_grad) pv.ensure_grad();
    if (pp.requires_grad) pp.ensure_grad();
    auto corner = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
      return ((z * H + y) * W + x) * C;
    };
    for (std::int64_t b = 0; b < B; ++b) {
      const AxisSample ax = axis_sample(pp.value[b * 3 + 0], W);
      const AxisSample ay = axis_sample(pp.value[b * 3 + 1], H);
      const AxisSample az = axis_sample(pp.value[b * 3 + 2], D);
      const std::int64_t x1 = std::min(ax.lo + 1, W - 1);
      const std::int64_t y1 = std::min(ay.lo + 1, H - 1);
      const std::int64_t z1 = std::min(az.lo + 1, D - 1);
      const double* g = self.grad.data() + b * C;
      double dgx = 0.0, dgy = 0.0, dgz = 0.0;
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const double wz = dz ? az.frac : 1 - az.frac;
            const double wy = dy ? ay.frac : 1 - ay.frac;
            const double wx = dx ? ax.frac : 1 - ax.frac;
            const std::int64_t off = corner(dz ? z1 : az.lo, dy ? y1 : ay.lo,
                                            dx ? x1 : ax.lo);
            if (pv.requires_grad) {
              const double w = wz * wy * wx;
              if (w != 0.0)
                for (std::int64_t c = 0; c < C; ++c)
                  pv.grad[off + c] += w * g[c];
            }
            if (pp.requires_grad) {
              double dot = 0.0;
              for (std::int64_t c = 0; c < C; ++c)
                dot += g[c] * pv.value[off + c];
              dgx += dot * (dx ? 1.0 : -1.0) * wz * wy;
              dgy += dot * (dy ? 1.0 : -1.0) * wz * wx;
              dgz += dot * (dz ? 1.0 : -1.0) * wy * wx;
            }
          }
      if (pp.requires_grad) {
        if (ax.interior) pp.grad[b * 3 + 0] += dgx;
        if (ay.interior) pp.grad[b * 3 + 1] += dgy;
        if (az.interior) pp.grad[b * 3 + 2] += dgz;
      }
    }
  };
  return Tensor::wrap(make_op("trilinear_sample", {B, C}, std::move(out),
                              {vol.node_ptr(), pts.node_ptr()},
                              std::move(backward)));
}

Tensor segment_cumsum_exclusive(const Tensor& x,
                                std::vector<std::int64_t> seg) {
  const std::int64_t M = x.numel();
  BN_CHECK(x.ndim() <= 2 && (x.ndim() == 1 || x.dim(1) == 1),
           "segment_cumsum_exclusive: input must be (M) or (M,1), got ",
           shape_str(x.shape()));
  BN_CHECK(static_cast<std::int64_t>(seg.size()) == M,
           "segment_cumsum_exclusive: ", seg.size(), " ids for ", M,
           " elements");
  for (std::int64_t i = 1; i < M; ++i)
    BN_CHECK(seg[i] >= seg[i - 1],
             "segment_cumsum_exclusive: ids must be non-decreasing");
  std::vector<double> out(static_cast<size_t>(M));
  const auto& v = x.values();
  double run = 0.0;
  for (std::int64_t i = 0; i < M; ++i) {
    if (i > 0 && seg[i] != seg[i - 1]) run = 0.0;
    out[i] = run;
    run += v[i];
  }
  auto backward = [seg = std::move(seg)](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const std::int64_t M = self.numel();
    double carry = 0.0;
    for (std::int64_t i = M - 1; i >= 0; --i) {
      if (i + 1 < M && seg[i + 1] != seg[i]) carry = 0.0;
      p.grad[i] += carry;
      carry += self.grad[i];
    }
  };
  return Tensor::wrap(make_op("segment_cumsum_exclusive", x.shape(),
                              std::move(out), {x.node_ptr()},
                              std::move(backward)));
}

}  // namespace bodynerf
