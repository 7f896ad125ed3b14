#include "fhnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include "fhnet/kernels.hpp"

namespace fhnet::ad {

namespace {

bool has_grad(const Node& n) { return n.grad.shape() == n.value.shape() && n.grad.size() == n.value.size(); }

Var make(Tensor value, std::vector<NodePtr> parents, std::string op, std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  node->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p && p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_rule = std::move(rule);
  }
  return Var(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.parents[i] && self.parents[i]->requires_grad; }
Tensor& pgrad(Node& self, std::size_t i) { return self.parents[i]->grad; }

// Strides of `in` (right-aligned) when indexed by an `out`-shaped counter.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out, std::size_t unit = 1) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = unit;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t d_in = in.size() - 1 - k;
    const std::size_t d_out = out.size() - 1 - k;
    strides[d_out] = in[d_in] == 1 ? 0 : stride;
    stride *= in[d_in];
  }
  return strides;
}

template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
  const std::size_t total = shape_size(out);
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    f(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <typename Fwd, typename GradA, typename GradB>
Var binary(const Var& a, const Var& b, const char* name, Fwd fwd, GradA ga, GradB gb) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  Tensor out(out_shape);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool same = a.shape() == b.shape();
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = fwd(av[i], bv[j]); });
  }
  return make(std::move(out), {a.node(), b.node()}, name, [same, out_shape, sa, sb, ga, gb](Node& self) {
    const Tensor& g = self.grad;
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const bool wa = wants(self, 0), wb = wants(self, 1);
    if (same) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (wa) pgrad(self, 0)[i] += ga(g[i], av[i], bv[i]);
        if (wb) pgrad(self, 1)[i] += gb(g[i], av[i], bv[i]);
      }
      return;
    }
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      if (wa) pgrad(self, 0)[i] += ga(g[o], av[i], bv[j]);
      if (wb) pgrad(self, 1)[j] += gb(g[o], av[i], bv[j]);
    });
  });
}

template <typename Fwd, typename Deriv>
Var unary(const Var& x, const char* name, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make(std::move(out), {x.node()}, name, [deriv](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& dx = pgrad(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
  });
}

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1)
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[r - 1 - k] = std::max(da, db);
  }
  return out;
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "leaf";
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var matmul(const Var& a, const Var& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2)
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(as) + " and " + shape_str(bs));
  const std::size_t m = as[as.size() - 2], k = as.back(), k2 = bs[bs.size() - 2], n = bs.back();
  if (k != k2) throw ShapeError("matmul inner extents differ: " + shape_str(as) + " x " + shape_str(bs));
  const Shape batch_a(as.begin(), as.end() - 2);
  const Shape batch_b(bs.begin(), bs.end() - 2);
  Shape batch;
  try {
    batch = broadcast_shapes(batch_a, batch_b);
  } catch (const ShapeError&) {
    throw ShapeError("matmul batch extents not broadcastable: " + shape_str(as) + " x " + shape_str(bs));
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const auto sa = broadcast_strides(batch_a, batch, m * k);
  const auto sb = broadcast_strides(batch_b, batch, k * n);
  const double* ap = a.value().data().data();
  const double* bp = b.value().data().data();
  double* op = out.data().data();
  for_each_broadcast(batch, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
    kernels::gemm({m, n, k, false, false}, ap + ia, bp + ib, op + o * m * n, false);
  });
  return make(std::move(out), {a.node(), b.node()}, "matmul", [batch, sa, sb, m, n, k](Node& self) {
    const double* g = self.grad.data().data();
    const double* ap = self.parents[0]->value.data().data();
    const double* bp = self.parents[1]->value.data().data();
    const bool wa = wants(self, 0), wb = wants(self, 1);
    double* ga = wa ? pgrad(self, 0).data().data() : nullptr;
    double* gb = wb ? pgrad(self, 1).data().data() : nullptr;
    for_each_broadcast(batch, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      // dA = dC B^T ; dB = A^T dC
      if (wa) kernels::gemm({m, k, n, false, true}, g + o * m * n, bp + ib, ga + ia, true);
      if (wb) kernels::gemm({k, n, m, true, false}, ap + ia, g + o * m * n, gb + ib, true);
    });
  });
}

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Var scale(const Var& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var tanh(const Var& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, "sigmoid",
      [](double v) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Var square(const Var& x) {
  return unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var elementwise(ElementwiseOp op, std::span<const Var> operands, double factor) {
  const std::size_t arity = (op == ElementwiseOp::kAdd || op == ElementwiseOp::kMul) ? 2 : 1;
  if (operands.size() != arity)
    throw std::invalid_argument("elementwise: expected " + std::to_string(arity) + " operands, got " +
                                std::to_string(operands.size()));
  switch (op) {
    case ElementwiseOp::kTanh: return tanh(operands[0]);
    case ElementwiseOp::kSigmoid: return sigmoid(operands[0]);
    case ElementwiseOp::kRelu: return relu(operands[0]);
    case ElementwiseOp::kAdd: return add(operands[0], operands[1]);
    case ElementwiseOp::kMul: return mul(operands[0], operands[1]);
    case ElementwiseOp::kScale: return scale(operands[0], factor);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

Var softmax_last(const Var& x, bool causal) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("softmax_last on a scalar");
  const std::size_t n = s.back();
  const std::size_t rows = x.value().size() / n;
  std::size_t tq = 1;
  if (causal) {
    if (s.size() < 2) throw ShapeError("causal softmax needs rank >= 2, got " + shape_str(s));
    tq = s[s.size() - 2];
    if (tq > n) throw ShapeError("causal softmax needs Tq <= Tk, got " + shape_str(s));
  }
  // number of visible keys for a row
  auto visible = [causal, tq, n](std::size_t row) { return causal ? (row % tq) + 1 + (n - tq) : n; };
  Tensor out(s);
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * n;
    double* o = out.data().data() + r * n;
    const std::size_t vis = visible(r);
    double mx = in[0];
    for (std::size_t j = 1; j < vis; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < vis; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < vis; ++j) o[j] /= z;
    for (std::size_t j = vis; j < n; ++j) o[j] = 0.0;
  }
  return make(std::move(out), {x.node()}, causal ? "softmax_causal" : "softmax", [n, rows](Node& self) {
    Tensor& dx = pgrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data().data() + r * n;
      const double* g = self.grad.data().data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      double* d = dx.data().data() + r * n;
      for (std::size_t j = 0; j < n; ++j) d[j] += y[j] * (g[j] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("layer_norm on a scalar");
  const std::size_t n = s.back();
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n})
    throw ShapeError("layer_norm gain/bias must be (" + std::to_string(n) + "), got " + shape_str(gain.shape()) +
                     " and " + shape_str(bias.shape()));
  const std::size_t rows = x.value().size() / n;
  Tensor out(s);
  Tensor xhat(s);
  std::vector<double> inv_std(rows);
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += in[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (in[j] - mu) * inv_std[r];
      xhat[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make(std::move(out), {x.node(), gain.node(), bias.node()}, "layer_norm",
              [n, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                const Tensor& gv = self.parents[1]->value;
                const bool wx = wants(self, 0), wg = wants(self, 1), wb = wants(self, 2);
                std::vector<double> dh(n);
                for (std::size_t r = 0; r < rows; ++r) {
                  const double* g = self.grad.data().data() + r * n;
                  const double* h = xhat.data().data() + r * n;
                  double sum_dh = 0.0, sum_dh_h = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    if (wg) pgrad(self, 1)[j] += g[j] * h[j];
                    if (wb) pgrad(self, 2)[j] += g[j];
                    dh[j] = g[j] * gv[j];
                    sum_dh += dh[j];
                    sum_dh_h += dh[j] * h[j];
                  }
                  if (!wx) continue;
                  double* dx = pgrad(self, 0).data().data() + r * n;
                  const double k = inv_std[r] / static_cast<double>(n);
                  for (std::size_t j = 0; j < n; ++j)
                    dx[j] += k * (static_cast<double>(n) * dh[j] - sum_dh - h[j] * sum_dh_h);
                }
              });
}

Var conv1d(const Var& x, const Var& w, const Var& bias, Padding padding) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 2 && xs.size() != 3) throw ShapeError("conv1d input must be (C, T) or (B, C, T), got " + shape_str(xs));
  if (ws.size() != 3) throw ShapeError("conv1d weight must be (C_out, C_in, k), got " + shape_str(ws));
  kernels::Conv1dDims d;
  d.batch = xs.size() == 3 ? xs[0] : 1;
  d.c_in = xs[xs.size() - 2];
  d.length = xs.back();
  d.c_out = ws[0];
  d.kernel = ws[2];
  if (ws[1] != d.c_in) throw ShapeError("conv1d channel mismatch: input " + shape_str(xs) + ", weight " + shape_str(ws));
  if (padding == Padding::kSame && d.kernel % 2 == 0)
    throw ShapeError("conv1d same padding needs an odd kernel, got k=" + std::to_string(d.kernel));
  d.pad_left = padding == Padding::kSame ? (d.kernel - 1) / 2 : d.kernel - 1;
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{d.c_out})
    throw ShapeError("conv1d bias must be (" + std::to_string(d.c_out) + "), got " + shape_str(bias.shape()));
  Shape out_shape = xs;
  out_shape[out_shape.size() - 2] = d.c_out;
  Tensor out(out_shape);
  kernels::conv1d_forward(d, x.value().data().data(), w.value().data().data(),
                          has_bias ? bias.value().data().data() : nullptr, out.data().data());
  std::vector<NodePtr> parents{x.node(), w.node()};
  if (has_bias) parents.push_back(bias.node());
  return make(std::move(out), std::move(parents), "conv1d", [d, has_bias](Node& self) {
    double* dx = wants(self, 0) ? pgrad(self, 0).data().data() : nullptr;
    double* dw = wants(self, 1) ? pgrad(self, 1).data().data() : nullptr;
    double* db = has_bias && wants(self, 2) ? pgrad(self, 2).data().data() : nullptr;
    kernels::conv1d_backward(d, self.parents[0]->value.data().data(), self.parents[1]->value.data().data(),
                             self.grad.data().data(), dx, dw, db);
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make(std::move(out), {x.node()}, "reshape", [](Node& self) {
    Tensor& dx = pgrad(self, 0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
  });
}

Var permute(const Var& x, const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  if (order.size() != r) throw ShapeError("permute order rank mismatch for " + shape_str(s));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (order[i] >= r || seen[order[i]]) throw ShapeError("permute order is not a permutation");
    seen[order[i]] = true;
    out_shape[i] = s[order[i]];
  }
  // input strides, then re-ordered to follow the output counter
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t d = r; d-- > 1;) in_strides[d - 1] = in_strides[d] * s[d];
  std::vector<std::size_t> strides(r);
  for (std::size_t i = 0; i < r; ++i) strides[i] = in_strides[order[i]];
  std::vector<std::size_t> zero(r, 0);
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for_each_broadcast(out_shape, strides, zero, [&](std::size_t o, std::size_t i, std::size_t) { out[o] = xv[i]; });
  return make(std::move(out), {x.node()}, "permute", [out_shape, strides, zero](Node& self) {
    Tensor& dx = pgrad(self, 0);
    for_each_broadcast(out_shape, strides, zero, [&](std::size_t o, std::size_t i, std::size_t) { dx[i] += self.grad[o]; });
  });
}

Var transpose_last(const Var& x) {
  const std::size_t r = x.shape().size();
  if (r < 2) throw ShapeError("transpose_last needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[r - 1], order[r - 2]);
  return permute(x, order);
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = norm_axis(axis, s0.size());
  Shape out_shape = s0;
  out_shape[ax] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      if (d != ax && s[d] != s0[d]) ok = false;
    if (!ok) throw ShapeError("concat shape mismatch: " + shape_str(s0) + " vs " + shape_str(s));
    extents.push_back(s[ax]);
    out_shape[ax] += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s0[d];
  for (std::size_t d = ax + 1; d < s0.size(); ++d) inner *= s0[d];
  const std::size_t total = out_shape[ax];
  Tensor out(out_shape);
  std::size_t start = 0;
  std::vector<NodePtr> parents;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const std::size_t chunk = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data().data() + o * chunk, chunk, out.data().data() + (o * total + start) * inner);
    start += extents[p];
    parents.push_back(parts[p].node());
  }
  return make(std::move(out), std::move(parents), "concat", [outer, inner, total, extents](Node& self) {
    std::size_t start = 0;
    for (std::size_t p = 0; p < extents.size(); ++p) {
      const std::size_t chunk = extents[p] * inner;
      if (wants(self, p)) {
        Tensor& dx = pgrad(self, p);
        for (std::size_t o = 0; o < outer; ++o) {
          const double* g = self.grad.data().data() + (o * total + start) * inner;
          double* d = dx.data().data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) d[i] += g[i];
        }
      }
      start += extents[p];
    }
  });
}

Var slice(const Var& x, int axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size());
  if (begin >= end || end > s[ax])
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[ax] = end - begin;
  const std::size_t full = s[ax];
  const std::size_t chunk = (end - begin) * inner;
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data().data() + (o * full + begin) * inner, chunk, out.data().data() + o * chunk);
  return make(std::move(out), {x.node()}, "slice", [outer, inner, full, begin, chunk](Node& self) {
    Tensor& dx = pgrad(self, 0);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* g = self.grad.data().data() + o * chunk;
      double* d = dx.data().data() + (o * full + begin) * inner;
      for (std::size_t i = 0; i < chunk; ++i) d[i] += g[i];
    }
  });
}

Var sum(const Var& x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  return make(Tensor::scalar(s), {x.node()}, "sum", [](Node& self) {
    const double g = self.grad[0];
    for (double& d : pgrad(self, 0).data()) d += g;
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var sum_axis(const Var& x, int axis, bool keepdim) {
  const Shape& s = x.shape();
  const std::size_t ax = norm_axis(axis, s.size());
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t n = s[ax];
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d == ax) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(s[d]);
    }
  }
  Tensor out(out_shape);
  const Tensor& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * n + k) * inner + i];
  return make(std::move(out), {x.node()}, "sum_axis", [outer, inner, n](Node& self) {
    Tensor& dx = pgrad(self, 0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) dx[(o * n + k) * inner + i] += self.grad[o * inner + i];
  });
}

Var mean_axis(const Var& x, int axis, bool keepdim) {
  const std::size_t n = x.value().dim(axis);
  return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(n));
}

Var mse(const Var& prediction, const Var& target) {
  if (prediction.shape() != target.shape())
    throw ShapeError("mse shape mismatch: " + shape_str(prediction.shape()) + " vs " + shape_str(target.shape()));
  return mean(square(sub(prediction, target)));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b.defined() ? add(y, b) : y;
}

namespace {

// Iterative DFS producing parents-before-children order; detects cycles.
std::vector<Node*> topo_order(Node* root) {
  enum class Mark : unsigned char { kVisiting, kDone };
  std::unordered_map<Node*, Mark> marks;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  marks[root] = Mark::kVisiting;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!p || !p->requires_grad) continue;
      auto it = marks.find(p);
      if (it == marks.end()) {
        marks[p] = Mark::kVisiting;
        stack.emplace_back(p, 0);
      } else if (it->second == Mark::kVisiting) {
        throw std::logic_error("backward: cycle detected in computation record at op '" + p->op + "'");
      }
    } else {
      marks[node] = Mark::kDone;
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

void backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  Node* root = loss.node().get();
  if (root->value.size() != 1)
    throw ShapeError("backward needs a scalar loss, got " + shape_str(root->value.shape()));
  if (root->consumed) throw std::logic_error("backward: record already back-propagated; call reset() first");
  root->consumed = true;
  if (!root->requires_grad) return;
  const auto order = topo_order(root);
  for (Node* n : order) {
    const bool is_leaf = n->parents.empty();
    if (!is_leaf || !has_grad(*n)) n->grad = Tensor(n->value.shape(), 0.0);
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_rule) (*it)->backward_rule(**it);
}

void reset(const Var& loss) {
  Node* root = loss.node().get();
  root->consumed = false;
  if (!root->requires_grad) return;
  for (Node* n : topo_order(root)) n->grad = Tensor(n->value.shape(), 0.0);
}

}  // namespace fhnet::ad
