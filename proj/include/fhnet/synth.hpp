#pragma once

// Synthetic abdominal ECG with a known fetal reference.
//
// Each heartbeat is a sum of five Gaussians (P, Q, R, S, T) over the beat
// phase. Beats are laid out so every R peak falls on a sample, and each beat
// period can be jittered from a seeded generator. Leads are linear mixtures
// of one maternal and one fetal source plus white noise.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "fhnet/record.hpp"
#include "fhnet/sigproc.hpp"

namespace fhnet::synth {

struct Wave {
  double center_rad = 0.0;
  double width_rad = 0.1;
  double amplitude_mv = 0.0;
};

struct BeatModel {
  std::array<Wave, 5> waves;  // P, Q, R, S, T

  static BeatModel maternal();
  static BeatModel fetal();
  void validate() const;
  BeatModel scaled(double factor) const;
  double evaluate(double phase) const;
};

struct BeatTrainOptions {
  double hr_bpm = 80.0;
  double sample_rate_hz = 250.0;
  double duration_s = 10.0;
  double hr_jitter = 0.0;     // per-beat period perturbation, uniform in +/- jitter
  double phase_offset = 0.0;  // fraction of one beat by which the first R peak is delayed
  std::uint64_t seed = 0;
};

sigproc::SignalChannel synth_beat_train(const BeatModel& model, const BeatTrainOptions& options);
// Sample indices of the R peaks synth_beat_train places for the same options.
std::vector<std::size_t> r_peak_samples(const BeatTrainOptions& options);

struct MixConfig {
  std::size_t leads = 4;
  std::vector<double> maternal_gains{1.0, 0.8, 0.6, 1.2};
  std::vector<double> fetal_gains{0.5, 1.0, 0.0, 0.8};
  double rho = 0.1;  // fetal-to-maternal amplitude ratio, [1/50, 1/10]
  double noise_std = 0.01;
  double maternal_hr_bpm = 80.0;
  double fetal_hr_bpm = 140.0;
  double hr_jitter = 0.02;
  double duration_s = 10.0;
  double sample_rate_hz = 250.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static MixConfig from_json(const nlohmann::json& j);
};

// lead_i = maternal_gain_i * mECG + fetal_gain_i * rho * fECG + noise; the
// reference channel is the unscaled fECG.
AecgRecord mix_aecg(const MixConfig& cfg);

// Writes record_NNN.csv (+ sidecar) per config and manifest.json; returns the manifest.
nlohmann::ordered_json emit_dataset(const std::vector<MixConfig>& configs, const std::filesystem::path& out_dir);
nlohmann::ordered_json regenerate_from_manifest(const std::filesystem::path& manifest,
                                                const std::filesystem::path& out_dir);
std::vector<std::filesystem::path> dataset_outputs(std::size_t count, const std::filesystem::path& out_dir);

}  // namespace fhnet::synth
