#include "fhnet/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace fhnet::graph {

AdjacencyMode parse_adjacency_mode(const std::string& name) {
  if (name == "identity") return AdjacencyMode::kIdentity;
  if (name == "fully-connected") return AdjacencyMode::kFullyConnected;
  if (name == "ring") return AdjacencyMode::kRing;
  if (name == "custom") return AdjacencyMode::kCustom;
  throw std::invalid_argument("unknown adjacency mode '" + name + "' (identity, fully-connected, ring, custom)");
}

std::string to_string(AdjacencyMode mode) {
  switch (mode) {
    case AdjacencyMode::kIdentity: return "identity";
    case AdjacencyMode::kFullyConnected: return "fully-connected";
    case AdjacencyMode::kRing: return "ring";
    case AdjacencyMode::kCustom: return "custom";
  }
  return "?";
}

namespace {

void check_square(const Tensor& a, const char* what) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ShapeError(std::string(what) + " must be square, got " + shape_str(a.shape()));
}

void check_symmetric_nonnegative(const Tensor& a) {
  check_square(a, "adjacency");
  const std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = a[i * n + j];
      if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("adjacency entries must be finite and nonnegative");
      if (v != a[j * n + i]) throw std::invalid_argument("adjacency must be symmetric");
    }
}

}  // namespace

Tensor build_static_adjacency(std::size_t leads, AdjacencyMode mode, const std::optional<Tensor>& custom) {
  if (leads < 1) throw std::invalid_argument("a lead graph needs at least one node");
  Tensor a = Tensor::zeros({leads, leads});
  switch (mode) {
    case AdjacencyMode::kIdentity:
      return Tensor::eye(leads);
    case AdjacencyMode::kFullyConnected:
      for (std::size_t i = 0; i < leads; ++i)
        for (std::size_t j = 0; j < leads; ++j) a[i * leads + j] = i == j ? 0.0 : 1.0;
      return a;
    case AdjacencyMode::kRing:
      for (std::size_t i = 0; i < leads && leads > 1; ++i) {
        a[i * leads + (i + 1) % leads] = 1.0;
        a[i * leads + (i + leads - 1) % leads] = 1.0;
      }
      return a;
    case AdjacencyMode::kCustom:
      if (!custom) throw std::invalid_argument("custom adjacency mode needs a matrix");
      check_symmetric_nonnegative(*custom);
      if (custom->dim(0) != leads)
        throw ShapeError("custom adjacency is " + shape_str(custom->shape()) + " for " + std::to_string(leads) + " leads");
      return *custom;
  }
  return a;
}

EigenEstimate power_iteration(const Tensor& sym, std::vector<double> start, int iterations, double tol) {
  check_square(sym, "matrix");
  const std::size_t n = sym.dim(0);
  if (start.size() != n) throw ShapeError("power iteration start vector has the wrong length");
  double norm = 0.0;
  for (double x : start) norm += x * x;
  if (norm == 0.0) throw std::invalid_argument("power iteration start vector is zero");
  std::vector<double> v = std::move(start), w(n);
  for (double& x : v) x /= std::sqrt(norm);
  EigenEstimate est;
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += sym[i * n + j] * v[j];
      w[i] = s;
    }
    double rq = 0.0, wn = 0.0, res = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      rq += v[i] * w[i];
      wn += w[i] * w[i];
    }
    for (std::size_t i = 0; i < n; ++i) res += (w[i] - rq * v[i]) * (w[i] - rq * v[i]);
    est = {rq, std::sqrt(res), it + 1};
    if (est.residual < tol || wn == 0.0) break;
    wn = std::sqrt(wn);
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wn;
  }
  return est;
}

double lambda_max_estimate(const Tensor& laplacian) {
  check_square(laplacian, "Laplacian");
  const std::size_t n = laplacian.dim(0);
  // an alternating start plus every basis vector, so no single unlucky
  // direction can hide the top eigenvector
  std::vector<std::vector<double>> starts(1, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) starts[0][i] = (i % 2 ? -1.0 : 1.0) * (1.0 + 0.37 * static_cast<double>(i));
  for (std::size_t i = 0; i < n; ++i) {
    starts.emplace_back(n, 0.0);
    starts.back()[i] = 1.0;
  }
  double best = 0.0;
  bool certified = true;
  for (auto& s : starts) {
    const auto est = power_iteration(laplacian, std::move(s));
    best = std::max(best, est.value);
    certified = certified && est.residual <= kCertifiedResidual;
  }
  // 2 bounds the spectrum of a normalized Laplacian
  if (!certified || best < 1e-12) return 2.0;
  return best;
}

Tensor normalized_laplacian(const Tensor& adjacency) {
  check_symmetric_nonnegative(adjacency);
  const std::size_t n = adjacency.dim(0);
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += adjacency[i * n + j];
    inv_sqrt[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Tensor lap = Tensor::eye(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) lap[i * n + j] -= inv_sqrt[i] * adjacency[i * n + j] * inv_sqrt[j];
  return lap;
}

Tensor scaled_laplacian(const Tensor& adjacency) {
  Tensor lap = normalized_laplacian(adjacency);
  const std::size_t n = lap.dim(0);
  const double lmax = lambda_max_estimate(lap);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) lap[i * n + j] = 2.0 * lap[i * n + j] / lmax - (i == j ? 1.0 : 0.0);
  return lap;
}

std::vector<Tensor> cheb_basis(const Tensor& scaled_lap, std::size_t order) {
  check_square(scaled_lap, "scaled Laplacian");
  if (order < 1) throw std::invalid_argument("Chebyshev order must be >= 1");
  const std::size_t n = scaled_lap.dim(0);
  std::vector<Tensor> basis{Tensor::eye(n)};
  if (order > 1) basis.push_back(scaled_lap);
  while (basis.size() < order) {
    const Tensor& prev = basis[basis.size() - 1];
    const Tensor& prev2 = basis[basis.size() - 2];
    Tensor next({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t m = 0; m < n; ++m) s += scaled_lap[i * n + m] * prev[m * n + j];
        next[i * n + j] = 2.0 * s - prev2[i * n + j];
      }
    basis.push_back(std::move(next));
  }
  return basis;
}

LeadGraph LeadGraph::build(const Tensor& adjacency, std::size_t order) {
  LeadGraph g;
  g.adjacency = adjacency;
  g.scaled_laplacian = graph::scaled_laplacian(adjacency);
  g.basis = cheb_basis(g.scaled_laplacian, order);
  return g;
}

ad::Var effective_dependency(const ad::Var& scores, const Tensor& adjacency, const ad::Var& masks) {
  check_square(adjacency, "adjacency");
  const std::size_t n = adjacency.dim(0);
  if (masks.value().rank() != 3 || masks.dim(1) != n || masks.dim(2) != n)
    throw ShapeError("masks must be [K, " + std::to_string(n) + ", " + std::to_string(n) + "], got " +
                     shape_str(masks.shape()));
  if (scores.value().rank() < 3 || scores.dim(-3) != masks.dim(0) || scores.dim(-2) != n || scores.dim(-1) != n)
    throw ShapeError("scores " + shape_str(scores.shape()) + " do not match masks " + shape_str(masks.shape()));
  const ad::Var dyn = ad::mul(ad::constant(adjacency), masks);
  return ad::softmax_last(ad::add(scores, dyn));
}

ad::Var cheb_gcn(const ad::Var& y, const ad::Var& p_eff, const std::vector<Tensor>& basis, const ad::Var& theta,
                 bool apply_relu) {
  if (y.value().rank() != 3) throw ShapeError("cheb_gcn input must be [L, T, D], got " + shape_str(y.shape()));
  const std::size_t leads = y.dim(0), steps = y.dim(1), d_in = y.dim(2);
  const std::size_t order = basis.size();
  if (order == 0) throw std::invalid_argument("empty Chebyshev basis");
  if (p_eff.shape() != Shape{order, leads, leads})
    throw ShapeError("P_eff " + shape_str(p_eff.shape()) + " does not match basis of " + std::to_string(order) +
                     " orders over " + std::to_string(leads) + " leads");
  if (theta.value().rank() != 3 || theta.dim(0) != order || theta.dim(1) != d_in)
    throw ShapeError("theta " + shape_str(theta.shape()) + " must be [" + std::to_string(order) + ", " +
                     std::to_string(d_in) + ", D_out]");
  const std::size_t d_out = theta.dim(2);
  const ad::Var flat = ad::reshape(y, {leads, steps * d_in});
  ad::Var acc;
  for (std::size_t k = 0; k < order; ++k) {
    const ad::Var pk = ad::reshape(ad::slice(p_eff, 0, k, k + 1), {leads, leads});
    const ad::Var mix = ad::mul(ad::constant(basis[k]), pk);
    const ad::Var agg = ad::reshape(ad::matmul(mix, flat), {leads * steps, d_in});
    const ad::Var tk = ad::reshape(ad::slice(theta, 0, k, k + 1), {d_in, d_out});
    const ad::Var term = ad::matmul(agg, tk);
    acc = acc.defined() ? ad::add(acc, term) : term;
  }
  if (apply_relu) acc = ad::relu(acc);
  return ad::reshape(acc, {leads, steps, d_out});
}

}  // namespace fhnet::graph
