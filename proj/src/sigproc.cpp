#include "fhnet/sigproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>

namespace fhnet::sigproc {

void SignalChannel::validate() const {
  if (!(sample_rate_hz > 0.0)) throw std::invalid_argument("sample_rate_hz must be positive");
  if (samples.empty()) throw std::invalid_argument("signal is empty");
}

std::size_t odd_window(double seconds, double sample_rate_hz) {
  if (!(seconds > 0.0)) throw std::invalid_argument("window length must be positive");
  auto n = static_cast<std::size_t>(std::ceil(seconds * sample_rate_hz - 1e-9));
  if (n % 2 == 0) ++n;
  return std::max<std::size_t>(n, 3);
}

std::vector<double> median_filter(const std::vector<double>& x, std::size_t window) {
  if (window % 2 == 0) throw std::invalid_argument("median window must be odd");
  const std::size_t n = x.size();
  const std::size_t half = window / 2;
  std::vector<double> out(n);
  std::vector<double> buf(window);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < window; ++j) {
      const auto src = static_cast<std::int64_t>(i + j) - static_cast<std::int64_t>(half);
      const auto clamped = std::clamp<std::int64_t>(src, 0, static_cast<std::int64_t>(n) - 1);
      buf[j] = x[static_cast<std::size_t>(clamped)];
    }
    std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(half), buf.end());
    out[i] = buf[half];
  }
  return out;
}

SignalChannel median_baseline_remove(const SignalChannel& ch, double w1_s, double w2_s) {
  ch.validate();
  if (!(w1_s < w2_s)) throw std::invalid_argument("median windows need w1 < w2");
  const std::size_t w1 = odd_window(w1_s, ch.sample_rate_hz);
  const std::size_t w2 = odd_window(w2_s, ch.sample_rate_hz);
  if (w2 > ch.samples.size())
    throw std::invalid_argument("median window of " + std::to_string(w2) + " samples exceeds signal length " +
                                std::to_string(ch.samples.size()));
  const auto baseline = median_filter(median_filter(ch.samples, w1), w2);
  SignalChannel out{ch.samples, ch.sample_rate_hz};
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] -= baseline[i];
  return out;
}

namespace {

const std::array<double, 4>& lowpass() {
  static const std::array<double, 4> h = [] {
    const double s3 = std::sqrt(3.0), d = 4.0 * std::sqrt(2.0);
    return std::array<double, 4>{(1 + s3) / d, (3 + s3) / d, (3 - s3) / d, (1 - s3) / d};
  }();
  return h;
}

// quadrature mirror of the low-pass filter
std::array<double, 4> highpass() {
  const auto& h = lowpass();
  return {h[3], -h[2], h[1], -h[0]};
}

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double hi = v[n / 2];
  if (n % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lo + hi);
}

}  // namespace

WaveletDecomposition dwt(const std::vector<double>& x, int levels) {
  if (levels < 1) throw std::invalid_argument("dwt needs at least one level");
  const std::size_t block = std::size_t{1} << levels;
  if (x.size() % block != 0) throw std::invalid_argument("dwt input length must be a multiple of 2^levels");
  const auto& h = lowpass();
  const auto g = highpass();
  WaveletDecomposition dec;
  std::vector<double> cur = x;
  for (int l = 0; l < levels; ++l) {
    const std::size_t n = cur.size();
    std::vector<double> a(n / 2), d(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      for (std::size_t j = 0; j < 4; ++j) {
        const double v = cur[(2 * k + j) % n];
        a[k] += h[j] * v;
        d[k] += g[j] * v;
      }
    }
    dec.details.push_back(std::move(d));
    cur = std::move(a);
  }
  dec.approximation = std::move(cur);
  return dec;
}

std::vector<double> idwt(const WaveletDecomposition& dec) {
  const auto& h = lowpass();
  const auto g = highpass();
  std::vector<double> cur = dec.approximation;
  for (std::size_t l = dec.details.size(); l-- > 0;) {
    const auto& d = dec.details[l];
    if (d.size() != cur.size()) throw std::invalid_argument("idwt band sizes are inconsistent");
    const std::size_t n = 2 * cur.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t k = 0; k < cur.size(); ++k)
      for (std::size_t j = 0; j < 4; ++j) out[(2 * k + j) % n] += h[j] * cur[k] + g[j] * d[k];
    cur = std::move(out);
  }
  return cur;
}

SignalChannel dwt_denoise(const SignalChannel& ch, const DwtDenoiseOptions& options) {
  ch.validate();
  if (options.levels < 1) throw std::invalid_argument("dwt levels must be >= 1");
  const std::size_t block = std::size_t{1} << options.levels;
  const std::size_t n = ch.samples.size();
  if (n < block)
    throw std::invalid_argument("signal of " + std::to_string(n) + " samples is shorter than 2^" +
                                std::to_string(options.levels));
  const std::size_t padded = (n + block - 1) / block * block;
  std::vector<double> x = ch.samples;
  x.resize(padded, 0.0);
  auto dec = dwt(x, options.levels);

  if (options.threshold_scale != 0.0) {
    std::vector<double> mag(dec.details.front().size());
    std::transform(dec.details.front().begin(), dec.details.front().end(), mag.begin(),
                   [](double v) { return std::abs(v); });
    const double sigma = median_of(std::move(mag)) / 0.6745;
    const double thr = options.threshold_scale * sigma * std::sqrt(2.0 * std::log(static_cast<double>(padded)));
    for (auto& band : dec.details)
      for (double& c : band) c = std::copysign(std::max(std::abs(c) - thr, 0.0), c);
  }
  auto rec = idwt(dec);
  rec.resize(n);
  return {std::move(rec), ch.sample_rate_hz};
}

ZScored zscore(const SignalChannel& ch) {
  ch.validate();
  const double n = static_cast<double>(ch.samples.size());
  double mean = 0.0;
  for (double v : ch.samples) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : ch.samples) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / n), 1e-8);
  ZScored out{{ch.samples, ch.sample_rate_hz}, mean, sd};
  for (double& v : out.channel.samples) v = (v - mean) / sd;
  return out;
}

SignalChannel zscore_inverse(const SignalChannel& ch, double mean, double std) {
  SignalChannel out = ch;
  for (double& v : out.samples) v = v * std + mean;
  return out;
}

void WindowSpec::validate() const {
  if (t_in == 0 || t_out == 0 || stride == 0) throw std::invalid_argument("window extents and stride must be positive");
  if (t_out > t_in)
    throw std::invalid_argument("T_out (" + std::to_string(t_out) + ") exceeds T_in (" + std::to_string(t_in) + ")");
}

std::string WindowSpec::label() const { return std::to_string(t_in) + "-" + std::to_string(t_out); }

std::size_t window_count(std::size_t length, const WindowSpec& spec) {
  spec.validate();
  const std::size_t span = spec.alignment == TargetAlignment::kTrailing ? spec.t_in : spec.t_in + spec.t_out;
  if (length < span) return 0;
  return (length - span) / spec.stride + 1;
}

std::vector<WindowPair> sliding_windows(const AecgRecord& record, const WindowSpec& spec) {
  spec.validate();
  record.validate();
  if (!record.fecg_ref) throw std::invalid_argument("sliding_windows needs a fecg_ref channel");
  const std::size_t len = record.length();
  if (len < spec.t_in)
    throw std::invalid_argument("record of " + std::to_string(len) + " samples is shorter than T_in " +
                                std::to_string(spec.t_in));
  const std::size_t count = window_count(len, spec);
  if (count == 0) throw std::invalid_argument("record too short for one window with a following target");
  const std::size_t leads = record.lead_count();
  std::vector<WindowPair> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    WindowPair p;
    p.offset = w * spec.stride;
    p.target_offset = spec.alignment == TargetAlignment::kTrailing ? p.offset + spec.t_in - spec.t_out
                                                                  : p.offset + spec.t_in;
    p.encoder_input = Tensor({leads, spec.t_in});
    for (std::size_t l = 0; l < leads; ++l)
      std::copy_n(record.leads[l].begin() + static_cast<std::ptrdiff_t>(p.offset), spec.t_in,
                  p.encoder_input.data().begin() + static_cast<std::ptrdiff_t>(l * spec.t_in));
    p.decoder_target = Tensor({spec.t_out});
    std::copy_n(record.fecg_ref->begin() + static_cast<std::ptrdiff_t>(p.target_offset), spec.t_out,
                p.decoder_target.data().begin());
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

std::string stage_label(const char* fmt, double a, double b) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, a, b);
  return buf;
}

}  // namespace

AecgRecord preprocess(const AecgRecord& record, const PreprocessOptions& options) {
  record.validate();
  AecgRecord out = record;
  for (auto& lead : out.leads) {
    SignalChannel ch{lead, record.sample_rate_hz};
    ch = median_baseline_remove(ch, options.median_w1_s, options.median_w2_s);
    ch = dwt_denoise(ch, {options.dwt_levels, 1.0});
    lead = zscore(ch).channel.samples;
  }
  out.preprocessing.push_back(stage_label("median(%g,%g)", options.median_w1_s, options.median_w2_s));
  out.preprocessing.push_back("dwt(" + std::to_string(options.dwt_levels) + ",db4,soft)");
  out.preprocessing.push_back("zscore");
  return out;
}

}  // namespace fhnet::sigproc
