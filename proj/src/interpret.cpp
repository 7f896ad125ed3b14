#include "fhnet/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "fhnet/record.hpp"

namespace fhnet::interpret {

using ad::Var;

IgResult integrated_gradients(const ScalarFn& f, const Tensor& x, const Tensor& baseline, std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("integrated gradients needs at least one step");
  if (x.shape() != baseline.shape())
    throw ShapeError("baseline " + shape_str(baseline.shape()) + " does not match input " + shape_str(x.shape()));

  std::vector<Tensor> grads(steps);
  const auto m = static_cast<std::int64_t>(steps);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t s = 0; s < m; ++s) {
    const double alpha = static_cast<double>(s + 1) / static_cast<double>(steps);
    Tensor point(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) point[i] = baseline[i] + alpha * (x[i] - baseline[i]);
    Var in = ad::leaf(std::move(point));
    Var out = f(in);
    ad::backward(out);
    grads[static_cast<std::size_t>(s)] = in.grad();
  }

  IgResult r;
  r.steps = steps;
  r.attribution = Tensor(x.shape());
  for (const auto& g : grads)  // fixed order keeps the sum reproducible
    for (std::size_t i = 0; i < x.size(); ++i) r.attribution[i] += g[i];
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.attribution[i] *= (x[i] - baseline[i]) / static_cast<double>(steps);
    total += r.attribution[i];
  }
  r.f_input = f(ad::constant(x)).value().item();
  r.f_baseline = f(ad::constant(baseline)).value().item();
  r.completeness_gap = std::abs(total - (r.f_input - r.f_baseline));
  return r;
}

ScalarFn prediction_target(const model::Model& m, const model::ModelParams& params, std::optional<std::size_t> sample) {
  if (sample && *sample >= m.config().t_out)
    throw std::invalid_argument("sample " + std::to_string(*sample) + " is past T_out " +
                                std::to_string(m.config().t_out));
  return [&m, &params, sample](const Var& x) {
    const model::BoundParams p(params, false);
    const Var y = m.decode_autoregressive(p, m.encode(p, x), m.config().t_out);
    return sample ? ad::sum(ad::slice(y, 0, *sample, *sample + 1)) : ad::sum(y);
  };
}

RecordAttribution attribute_record(const ScalarFn& f, std::size_t t_in, const Tensor& x, std::size_t steps) {
  if (x.rank() != 2) throw ShapeError("expected input [leads, n], got " + shape_str(x.shape()));
  const std::size_t L = x.dim(0), n = x.dim(1), T = t_in;
  if (T == 0) throw std::invalid_argument("window length must be positive");
  if (n < T) throw std::invalid_argument("input of " + std::to_string(n) + " samples is shorter than T_in " + std::to_string(T));

  RecordAttribution out;
  out.attribution = Tensor({L, n});
  for (std::size_t s = 0; s + T <= n; s += T) out.window_starts.push_back(s);
  if (n % T) out.window_starts.push_back(n - T);

  std::size_t covered = 0;
  for (std::size_t start : out.window_starts) {
    Tensor w({L, T});
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t t = 0; t < T; ++t) w[l * T + t] = x[l * n + start + t];
    const auto ig = integrated_gradients(f, w, Tensor::zeros({L, T}), steps);
    const double delta = std::abs(ig.f_input - ig.f_baseline);
    const double rel = delta > 0.0 ? ig.completeness_gap / delta : (ig.completeness_gap > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    out.max_relative_gap = std::max(out.max_relative_gap, rel);
    out.max_gap = std::max(out.max_gap, ig.completeness_gap);
    for (std::size_t t = std::max(covered, start) - start; t < T; ++t)
      for (std::size_t l = 0; l < L; ++l) out.attribution[l * n + start + t] = ig.attribution[l * T + t];
    covered = start + T;
  }
  return out;
}

RecordAttribution attribute_record(const model::Model& m, const model::ModelParams& params, const Tensor& x,
                                   std::size_t steps, std::optional<std::size_t> sample) {
  const std::size_t L = m.config().leads;
  if (x.rank() != 2 || x.dim(0) != L)
    throw ShapeError("expected input [" + std::to_string(L) + ", n], got " + shape_str(x.shape()));
  return attribute_record(prediction_target(m, params, sample), m.config().t_in, x, steps);
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

nlohmann::ordered_json matrix_json(const Tensor& t) {
  // [K, L, L] as nested arrays
  const std::size_t K = t.dim(0), L = t.dim(1);
  auto out = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < K; ++k) {
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < L; ++i) {
      auto row = nlohmann::ordered_json::array();
      for (std::size_t j = 0; j < L; ++j) row.push_back(t[(k * L + i) * L + j]);
      rows.push_back(std::move(row));
    }
    out.push_back(std::move(rows));
  }
  return out;
}

}  // namespace

AttributionTable window_lead_attribution(const Tensor& attr, double sample_rate_hz, double window_s) {
  if (attr.rank() != 2) throw ShapeError("attribution must be [leads, samples], got " + shape_str(attr.shape()));
  if (!(sample_rate_hz > 0.0) || !(window_s > 0.0)) throw std::invalid_argument("sample rate and window must be positive");
  const double per_window = sample_rate_hz * window_s;
  if (per_window < 1.0) throw std::invalid_argument("window of " + fixed(window_s, 4) + " s holds less than one sample");
  const std::size_t L = attr.dim(0), n = attr.dim(1);
  const auto windows = static_cast<std::size_t>(std::floor(static_cast<double>(n) / per_window + 1e-9));
  if (windows == 0)
    throw std::invalid_argument("attribution of " + std::to_string(n) + " samples is shorter than one window");
  if (!attr.all_finite()) throw std::invalid_argument("attribution has non-finite entries");

  AttributionTable table;
  table.window_s = window_s;
  table.sample_rate_hz = sample_rate_hz;
  table.values.assign(L, std::vector<double>(windows, 0.0));
  table.degenerate.assign(windows, false);
  auto bound = [&](std::size_t w) {
    return std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(static_cast<double>(w) * per_window)));
  };
  for (std::size_t w = 0; w < windows; ++w) {
    table.columns.push_back(fixed(static_cast<double>(w) * window_s, 2) + "s-" +
                            fixed(static_cast<double>(w + 1) * window_s, 2) + "s");
    std::vector<double> score(L, 0.0);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t t = bound(w); t < bound(w + 1); ++t) score[l] += std::abs(attr[l * n + t]);
    const auto [lo, hi] = std::minmax_element(score.begin(), score.end());
    const double span = *hi - *lo;
    if (span == 0.0) {
      table.degenerate[w] = true;
      for (std::size_t l = 0; l < L; ++l) table.values[l][w] = 1.0;
      continue;
    }
    for (std::size_t l = 0; l < L; ++l) table.values[l][w] = (score[l] - *lo) / span;
    table.values[static_cast<std::size_t>(lo - score.begin())][w] = 0.0;
    table.values[static_cast<std::size_t>(hi - score.begin())][w] = 1.0;
  }
  table.meta["normalization"] = "per-window min-max of summed absolute attribution";
  return table;
}

std::string AttributionTable::to_csv() const {
  std::string out = "lead";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  for (std::size_t l = 0; l < values.size(); ++l) {
    out += "Lead_" + std::to_string(l + 1);
    for (double v : values[l]) out += "," + fixed(v, 4);
    out += "\n";
  }
  return out;
}

nlohmann::ordered_json AttributionTable::to_json() const {
  nlohmann::ordered_json j;
  j["window_s"] = window_s;
  j["sample_rate_hz"] = sample_rate_hz;
  j["columns"] = columns;
  j["rows"] = nlohmann::ordered_json::array();
  for (std::size_t l = 0; l < values.size(); ++l)
    j["rows"].push_back({{"lead", "Lead_" + std::to_string(l + 1)}, {"values", values[l]}});
  j["degenerate"] = degenerate;
  j["meta"] = meta;
  return j;
}

std::vector<std::vector<std::vector<std::size_t>>> AttentionSnapshot::argmax() const {
  std::vector<std::vector<std::vector<std::size_t>>> out;
  for (const auto& p : p_eff) {
    const std::size_t K = p.dim(0), L = p.dim(1);
    auto& block = out.emplace_back(K, std::vector<std::size_t>(L, 0));
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < L; ++i) {
        const double* row = &p.data()[(k * L + i) * L];
        block[k][i] = static_cast<std::size_t>(std::max_element(row, row + L) - row);
      }
  }
  return out;
}

nlohmann::ordered_json AttentionSnapshot::to_json() const {
  nlohmann::ordered_json j;
  j["window_offset"] = window_offset;
  j["row_semantics"] = "row i of P_eff holds the weights lead i places on every lead j";
  j["blocks"] = nlohmann::ordered_json::array();
  const auto am = argmax();
  for (std::size_t b = 0; b < p_eff.size(); ++b)
    j["blocks"].push_back({{"block", b},
                           {"spatial_scores", matrix_json(spatial_scores[b])},
                           {"p_eff", matrix_json(p_eff[b])},
                           {"argmax", am[b]}});
  return j;
}

std::string AttentionSnapshot::to_csv(bool header) const {
  std::string out = header ? "window_offset,block,k,row,col,score,p_eff\n" : "";
  for (std::size_t b = 0; b < p_eff.size(); ++b) {
    const std::size_t K = p_eff[b].dim(0), L = p_eff[b].dim(1);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t jdx = 0; jdx < L; ++jdx) {
          const std::size_t at = (k * L + i) * L + jdx;
          out += std::to_string(window_offset) + "," + std::to_string(b) + "," + std::to_string(k) + "," + std::to_string(i) + "," + std::to_string(jdx) +
                 "," + format_double(spatial_scores[b][at]) + "," + format_double(p_eff[b][at]) + "\n";
        }
  }
  return out;
}

AttentionSnapshot export_attention(const model::Model& m, const model::ModelParams& params, const Tensor& x,
                                   std::size_t window_offset) {
  const model::BoundParams p(params, false);
  model::ForwardTrace trace;
  m.encode(p, ad::constant(x), &trace);
  AttentionSnapshot snap;
  snap.window_offset = window_offset;
  for (auto& b : trace.blocks) {
    snap.spatial_scores.push_back(std::move(b.spatial_scores));
    snap.p_eff.push_back(std::move(b.p_eff));
  }
  return snap;
}

}  // namespace fhnet::interpret
