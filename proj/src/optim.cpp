#include "fhnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fhnet {

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " + std::to_string(grads.size()) +
                     " grads");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.shape(), 0.0);
      state.second_moment.emplace_back(p.shape(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state holds a different parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.first_moment[i].shape())
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " shape " + shape_str(params[i].shape()) +
                       " vs grad " + shape_str(grads[i].shape()));
  }
  const auto& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= h.lr * mhat / (std::sqrt(vhat) + h.epsilon);
    }
  }
}

double clip_grad_norm(std::span<Tensor> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data()) v *= f;
  }
  return norm;
}

namespace {

double evaluate(const MultiScalarFn& fn, const std::vector<Tensor>& points) {
  std::vector<ad::Var> vars;
  vars.reserve(points.size());
  for (const auto& p : points) vars.push_back(ad::constant(p));
  return fn(vars).value().item();
}

}  // namespace

GradCheckResult grad_check(const MultiScalarFn& fn, const std::vector<Tensor>& points,
                           const GradCheckOptions& options) {
  std::vector<ad::Var> leaves;
  for (const auto& p : points) leaves.push_back(ad::leaf(p));
  ad::Var out = fn(leaves);
  ad::backward(out);

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  std::vector<Tensor> probe = points;
  for (std::size_t t = 0; t < points.size(); ++t) {
    const Tensor& analytic = leaves[t].grad();
    std::vector<std::size_t> coords(points[t].size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor && coords.size() > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double a = analytic.size() == points[t].size() ? analytic[i] : 0.0;
      if (options.skip_zero_analytic && a == 0.0) {
        ++result.skipped;
        continue;
      }
      const double x0 = points[t][i];
      probe[t][i] = x0 + options.step;
      const double fp = evaluate(fn, probe);
      probe[t][i] = x0 - options.step;
      const double fm = evaluate(fn, probe);
      probe[t][i] = x0;
      const double n = (fp - fm) / (2.0 * options.step);
      const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
      ++result.checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = t;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = n;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& point, double step) {
  GradCheckOptions options;
  options.step = step;
  return grad_check([&fn](const std::vector<ad::Var>& v) { return fn(v[0]); }, {point}, options);
}

}  // namespace fhnet
