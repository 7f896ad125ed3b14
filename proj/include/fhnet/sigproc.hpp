#pragma once

// Conditioning of abdominal leads: baseline-wander removal by a two-pass
// median filter, wavelet shrinkage, z-scoring, and window extraction.

#include <cstddef>
#include <string>
#include <vector>

#include "fhnet/record.hpp"
#include "fhnet/tensor.hpp"

namespace fhnet::sigproc {

struct SignalChannel {
  std::vector<double> samples;
  double sample_rate_hz = 250.0;

  void validate() const;
};

// Seconds to an odd sample count >= 3 (rounded up).
std::size_t odd_window(double seconds, double sample_rate_hz);

// Running median with edge-value replication; `window` must be odd.
std::vector<double> median_filter(const std::vector<double>& x, std::size_t window);

// x - median(median(x, w1), w2).
SignalChannel median_baseline_remove(const SignalChannel& ch, double w1_s = 0.2, double w2_s = 0.6);

// Periodized 4-tap Daubechies filter bank.
struct WaveletDecomposition {
  std::vector<double> approximation;
  std::vector<std::vector<double>> details;  // details[0] is the finest level
};

WaveletDecomposition dwt(const std::vector<double>& x, int levels);
std::vector<double> idwt(const WaveletDecomposition& dec);

struct DwtDenoiseOptions {
  int levels = 6;
  // Multiplier on the universal threshold; 0 gives an exact analysis/synthesis round trip.
  double threshold_scale = 1.0;
};

// Soft-thresholds every detail band with sigma * sqrt(2 ln n), where sigma is
// MAD(finest details) / 0.6745 and n the padded length. Zero-pads to a multiple
// of 2^levels and truncates back.
SignalChannel dwt_denoise(const SignalChannel& ch, const DwtDenoiseOptions& options = {});

struct ZScored {
  SignalChannel channel;
  double mean = 0.0;
  double std = 1.0;  // floored at 1e-8
};

ZScored zscore(const SignalChannel& ch);
SignalChannel zscore_inverse(const SignalChannel& ch, double mean, double std);

enum class TargetAlignment {
  kTrailing,  // target = reference over the last T_out samples of the encoder span
  kFollowing  // target = reference over the T_out samples right after the span
};

struct WindowSpec {
  std::size_t t_in = 100;
  std::size_t t_out = 50;
  std::size_t stride = 50;
  TargetAlignment alignment = TargetAlignment::kTrailing;

  void validate() const;
  // "100-50", the encoder-decoder notation used in result tables.
  std::string label() const;
};

struct WindowPair {
  Tensor encoder_input;   // [leads, t_in]
  Tensor decoder_target;  // [t_out]
  std::size_t offset = 0;
  std::size_t target_offset = 0;
};

std::size_t window_count(std::size_t length, const WindowSpec& spec);
// Requires a reference channel.
std::vector<WindowPair> sliding_windows(const AecgRecord& record, const WindowSpec& spec);

// Pipeline applied by `preprocess`: median -> dwt -> zscore on every lead.
struct PreprocessOptions {
  double median_w1_s = 0.2;
  double median_w2_s = 0.6;
  int dwt_levels = 6;
};

AecgRecord preprocess(const AecgRecord& record, const PreprocessOptions& options = {});

}  // namespace fhnet::sigproc
