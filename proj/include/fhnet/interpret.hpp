#pragma once

// Integrated Gradients over the encoder input, per-window lead attribution
// tables, and export of the spatial attention each block used.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhnet/autodiff.hpp"
#include "fhnet/model.hpp"
#include "fhnet/tensor.hpp"

namespace fhnet::interpret {

using ScalarFn = std::function<ad::Var(const ad::Var&)>;

struct IgResult {
  Tensor attribution;  // same shape as the input
  double f_input = 0.0;
  double f_baseline = 0.0;
  double completeness_gap = 0.0;  // |sum(attribution) - (f_input - f_baseline)|
  std::size_t steps = 0;
};

// Right Riemann sum over `steps` points of the straight path from baseline to x.
// `f` must be safe to call from several threads at once.
IgResult integrated_gradients(const ScalarFn& f, const Tensor& x, const Tensor& baseline, std::size_t steps);

// Sum of the autoregressive prediction for one encoder window, or a single
// predicted sample when `sample` is set.
ScalarFn prediction_target(const model::Model& m, const model::ModelParams& params,
                           std::optional<std::size_t> sample = std::nullopt);

struct RecordAttribution {
  Tensor attribution;  // [leads, samples]
  std::vector<std::size_t> window_starts;
  double max_relative_gap = 0.0;  // worst gap / |F(x) - F(baseline)| over windows
  double max_gap = 0.0;
};

// Tiles x ([leads, n], n >= t_in) with encoder windows at 0, t_in, 2 t_in, ...;
// when t_in does not divide n a last window is aligned to the end and only
// fills the samples no earlier window covered. Zero baseline.
RecordAttribution attribute_record(const ScalarFn& f, std::size_t t_in, const Tensor& x, std::size_t steps);
RecordAttribution attribute_record(const model::Model& m, const model::ModelParams& params, const Tensor& x,
                                   std::size_t steps, std::optional<std::size_t> sample = std::nullopt);

struct AttributionTable {
  double window_s = 0.25;
  double sample_rate_hz = 250.0;
  std::vector<std::string> columns;        // "0.00s-0.25s", ...
  std::vector<std::vector<double>> values;  // [lead][window], min-max scaled per window
  std::vector<bool> degenerate;             // window where every lead scored the same
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  std::size_t leads() const { return values.size(); }
  // Rows Lead_1..Lead_L, fixed 4 decimals.
  std::string to_csv() const;
  nlohmann::ordered_json to_json() const;
};

// attr: [leads, samples]. Score = sum of |attr| over each window's samples;
// a trailing partial window is dropped.
AttributionTable window_lead_attribution(const Tensor& attr, double sample_rate_hz, double window_s = 0.25);

struct AttentionSnapshot {
  std::size_t window_offset = 0;
  std::vector<Tensor> spatial_scores;  // per block [K, L, L]
  std::vector<Tensor> p_eff;           // per block [K, L, L]

  // [block][k][lead] -> lead with the largest P_eff weight in that row
  std::vector<std::vector<std::vector<std::size_t>>> argmax() const;
  nlohmann::ordered_json to_json() const;
  // window_offset,block,k,row,col,score,p_eff
  std::string to_csv(bool header = true) const;
};

AttentionSnapshot export_attention(const model::Model& m, const model::ModelParams& params, const Tensor& x,
                                   std::size_t window_offset = 0);

}  // namespace fhnet::interpret
