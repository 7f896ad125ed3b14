#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fhnet/autodiff.hpp"
#include "fhnet/tensor.hpp"

namespace fhnet {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::int64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// Bias-corrected Adam. Moments are created as zeros on the first call.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

// Scales grads in place so their joint L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);

struct GradCheckOptions {
  double step = 1e-5;
  // Coordinates whose analytic gradient is exactly zero (a dead ReLU at the
  // probe point) are skipped: a central difference straddling the kink is not
  // a meaningful reference there.
  bool skip_zero_analytic = true;
  // 0 checks every coordinate; otherwise a seeded subset of this many per tensor.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double worst_analytic = 0.0;  // the two estimates at the worst coordinate
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

using MultiScalarFn = std::function<ad::Var(const std::vector<ad::Var>&)>;

// Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const MultiScalarFn& fn, const std::vector<Tensor>& points,
                           const GradCheckOptions& options = {});
GradCheckResult grad_check(const std::function<ad::Var(const ad::Var&)>& fn, const Tensor& point,
                           double step = 1e-5);

}  // namespace fhnet
