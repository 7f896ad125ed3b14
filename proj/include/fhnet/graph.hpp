#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fhnet/autodiff.hpp"
#include "fhnet/tensor.hpp"

namespace fhnet::graph {

enum class AdjacencyMode { kIdentity, kFullyConnected, kRing, kCustom };

AdjacencyMode parse_adjacency_mode(const std::string& name);
std::string to_string(AdjacencyMode mode);

// Symmetric nonnegative [L, L]. kCustom validates and returns `custom`.
Tensor build_static_adjacency(std::size_t leads, AdjacencyMode mode, const std::optional<Tensor>& custom = {});

struct EigenEstimate {
  double value = 0.0;     // Rayleigh quotient of the final iterate
  double residual = 0.0;  // |S v - value v|
  int iterations = 0;
};

// Power iteration on a symmetric matrix; stops once the residual drops below tol.
EigenEstimate power_iteration(const Tensor& sym, std::vector<double> start, int iterations = 50, double tol = 1e-9);

inline constexpr double kCertifiedResidual = 1e-7;
// Largest eigenvalue of a normalized Laplacian: the best power-iteration
// estimate over several starts when every run reaches kCertifiedResidual,
// otherwise the bound 2. A vanishing estimate (no edges) also yields 2.
double lambda_max_estimate(const Tensor& laplacian);

// I - D^-1/2 A D^-1/2; a node without edges gets an identity row.
Tensor normalized_laplacian(const Tensor& adjacency);
// 2 L / lambda_max - I with lambda_max from lambda_max_estimate.
Tensor scaled_laplacian(const Tensor& adjacency);

// T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}.
std::vector<Tensor> cheb_basis(const Tensor& scaled_lap, std::size_t order);

struct LeadGraph {
  Tensor adjacency;
  Tensor scaled_laplacian;
  std::vector<Tensor> basis;

  static LeadGraph build(const Tensor& adjacency, std::size_t order);
  std::size_t leads() const { return adjacency.dim(0); }
  std::size_t order() const { return basis.size(); }
};

// softmax over source leads of (scores + adjacency * mask), per order k.
// scores: [..., K, L, L]; masks: [K, L, L].
ad::Var effective_dependency(const ad::Var& scores, const Tensor& adjacency, const ad::Var& masks);

// y: [L, T, D_in]; p_eff: [K, L, L]; theta: [K, D_in, D_out] -> [L, T, D_out].
// Each order mixes nodes with T_k * P_k, then maps features through theta_k.
ad::Var cheb_gcn(const ad::Var& y, const ad::Var& p_eff, const std::vector<Tensor>& basis, const ad::Var& theta,
                 bool apply_relu = true);

}  // namespace fhnet::graph
