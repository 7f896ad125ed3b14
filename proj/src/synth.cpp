#include "fhnet/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "fhnet/json_util.hpp"

namespace fhnet::synth {

namespace {

constexpr double kPi = std::numbers::pi;

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  return std::mt19937_64(seq);
}

// Real-valued R positions padded by spare beats on both sides: with jitter
// below 0.2 every sample then lies inside some beat's owned span.
std::vector<double> r_positions(const BeatTrainOptions& o, std::size_t n) {
  if (!(o.hr_bpm >= 30.0 && o.hr_bpm <= 240.0))
    throw std::invalid_argument("heart rate " + std::to_string(o.hr_bpm) + " bpm outside [30, 240]");
  if (!(o.hr_jitter >= 0.0 && o.hr_jitter < 0.2)) throw std::invalid_argument("hr_jitter must be in [0, 0.2)");
  if (!(o.sample_rate_hz > 0.0)) throw std::invalid_argument("sample rate must be positive");
  if (!(o.phase_offset >= 0.0 && o.phase_offset < 1.0)) throw std::invalid_argument("phase_offset must be in [0, 1)");
  const double period = 60.0 / o.hr_bpm * o.sample_rate_hz;
  auto rng = stream_rng(o.seed, 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> r;
  double pos = period * (0.5 + o.phase_offset) - 3.0 * period;
  while (pos < static_cast<double>(n) + 2.0 * period) {
    r.push_back(pos);
    pos += period * (1.0 + o.hr_jitter * u(rng));
  }
  return r;
}

std::size_t sample_count(const BeatTrainOptions& o) {
  if (!(o.duration_s > 0.0)) throw std::invalid_argument("duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(o.duration_s * o.sample_rate_hz));
  if (n == 0) throw std::invalid_argument("duration shorter than one sample");
  return n;
}

}  // namespace

BeatModel BeatModel::maternal() {
  return {{Wave{-1.2, 0.12, 0.12}, Wave{-0.22, 0.05, -0.12}, Wave{0.0, 0.1, 1.0}, Wave{0.22, 0.05, -0.2},
           Wave{1.6, 0.35, 0.3}}};
}

BeatModel BeatModel::fetal() {
  return {{Wave{-1.2, 0.12, 0.08}, Wave{-0.3, 0.06, -0.15}, Wave{0.0, 0.08, 1.0}, Wave{0.3, 0.06, -0.25},
           Wave{1.5, 0.25, 0.25}}};
}

void BeatModel::validate() const {
  for (const auto& w : waves)
    if (!(w.width_rad > 0.0)) throw std::invalid_argument("beat wave widths must be positive");
  if (!(waves[2].amplitude_mv > 0.0)) throw std::invalid_argument("R amplitude must be positive");
  for (std::size_t i = 0; i < waves.size(); ++i) {
    const double c = waves[i].center_rad;
    if (!(c > -kPi && c <= kPi)) throw std::invalid_argument("wave centers must lie in (-pi, pi]");
    if (i > 0 && !(waves[i - 1].center_rad < c)) throw std::invalid_argument("wave centers must be ordered P<Q<R<S<T");
  }
}

BeatModel BeatModel::scaled(double factor) const {
  BeatModel out = *this;
  for (auto& w : out.waves) w.amplitude_mv *= factor;
  return out;
}

double BeatModel::evaluate(double phase) const {
  double v = 0.0;
  for (const auto& w : waves) {
    const double d = phase - w.center_rad;
    v += w.amplitude_mv * std::exp(-d * d / (2.0 * w.width_rad * w.width_rad));
  }
  return v;
}

std::vector<std::size_t> r_peak_samples(const BeatTrainOptions& options) {
  const std::size_t n = sample_count(options);
  std::vector<std::size_t> out;
  for (double r : r_positions(options, n)) {
    const double rr = std::round(r);
    if (rr >= 0.0 && rr < static_cast<double>(n)) out.push_back(static_cast<std::size_t>(rr));
  }
  return out;
}

sigproc::SignalChannel synth_beat_train(const BeatModel& model, const BeatTrainOptions& options) {
  // a zero-amplitude model is allowed as a degenerate source
  bool silent = true;
  for (const auto& w : model.waves) silent = silent && w.amplitude_mv == 0.0;
  if (!silent) model.validate();
  const std::size_t n = sample_count(options);
  const auto r = r_positions(options, n);
  sigproc::SignalChannel out{std::vector<double>(n, 0.0), options.sample_rate_hz};
  // beat k owns the samples between the midpoints to its neighbours
  for (std::size_t k = 1; k + 1 < r.size(); ++k) {
    const double center = std::round(r[k]);
    const double lo = 0.5 * (r[k - 1] + r[k]);
    const double hi = 0.5 * (r[k] + r[k + 1]);
    const double period = hi - lo;
    const auto first = static_cast<std::int64_t>(std::ceil(lo));
    const auto last = static_cast<std::int64_t>(std::ceil(hi));
    for (std::int64_t i = std::max<std::int64_t>(first, 0); i < std::min<std::int64_t>(last, static_cast<std::int64_t>(n));
         ++i)
      out.samples[static_cast<std::size_t>(i)] = model.evaluate(2.0 * kPi * (static_cast<double>(i) - center) / period);
  }
  return out;
}

void MixConfig::validate() const {
  if (leads < 2) throw std::invalid_argument("a mix needs at least 2 leads");
  if (maternal_gains.size() != leads || fetal_gains.size() != leads)
    throw std::invalid_argument("gain vectors must have one entry per lead (" + std::to_string(leads) + ")");
  if (!(rho >= 1.0 / 50.0 - 1e-12 && rho <= 1.0 / 10.0 + 1e-12))
    throw std::invalid_argument("rho " + std::to_string(rho) + " outside [1/50, 1/10]");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be non-negative");
  if (!(maternal_hr_bpm > 0.0 && fetal_hr_bpm > 0.0)) throw std::invalid_argument("heart rates must be positive");
  if (!(duration_s > 0.0 && sample_rate_hz > 0.0)) throw std::invalid_argument("duration and sample rate must be positive");
}

nlohmann::ordered_json MixConfig::to_json() const {
  nlohmann::ordered_json j;
  j["leads"] = leads;
  j["maternal_gains"] = maternal_gains;
  j["fetal_gains"] = fetal_gains;
  j["rho"] = rho;
  j["noise_std"] = noise_std;
  j["maternal_hr_bpm"] = maternal_hr_bpm;
  j["fetal_hr_bpm"] = fetal_hr_bpm;
  j["hr_jitter"] = hr_jitter;
  j["duration_s"] = duration_s;
  j["sample_rate_hz"] = sample_rate_hz;
  j["seed"] = seed;
  return j;
}

MixConfig MixConfig::from_json(const nlohmann::json& j) {
  const std::string ctx = "mix config";
  reject_unknown_keys(j,
                      {"leads", "maternal_gains", "fetal_gains", "rho", "noise_std", "maternal_hr_bpm", "fetal_hr_bpm",
                       "hr_jitter", "duration_s", "sample_rate_hz", "seed"},
                      ctx);
  MixConfig c;
  read_optional(j, "leads", c.leads, ctx);
  read_optional(j, "maternal_gains", c.maternal_gains, ctx);
  read_optional(j, "fetal_gains", c.fetal_gains, ctx);
  read_optional(j, "rho", c.rho, ctx);
  read_optional(j, "noise_std", c.noise_std, ctx);
  read_optional(j, "maternal_hr_bpm", c.maternal_hr_bpm, ctx);
  read_optional(j, "fetal_hr_bpm", c.fetal_hr_bpm, ctx);
  read_optional(j, "hr_jitter", c.hr_jitter, ctx);
  read_optional(j, "duration_s", c.duration_s, ctx);
  read_optional(j, "sample_rate_hz", c.sample_rate_hz, ctx);
  read_optional(j, "seed", c.seed, ctx);
  c.validate();
  return c;
}

AecgRecord mix_aecg(const MixConfig& cfg) {
  cfg.validate();
  auto offsets = stream_rng(cfg.seed, 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  BeatTrainOptions mo{cfg.maternal_hr_bpm, cfg.sample_rate_hz, cfg.duration_s, cfg.hr_jitter, unit(offsets), cfg.seed};
  BeatTrainOptions fo{cfg.fetal_hr_bpm, cfg.sample_rate_hz, cfg.duration_s, cfg.hr_jitter, unit(offsets),
                      cfg.seed ^ 0x9e3779b97f4a7c15ull};
  const auto m = synth_beat_train(BeatModel::maternal(), mo).samples;
  const auto f = synth_beat_train(BeatModel::fetal(), fo).samples;

  AecgRecord rec;
  rec.sample_rate_hz = cfg.sample_rate_hz;
  rec.leads.assign(cfg.leads, std::vector<double>(m.size()));
  for (std::size_t l = 0; l < cfg.leads; ++l) {
    auto noise_rng = stream_rng(cfg.seed, 16 + l);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < m.size(); ++i) {
      double v = cfg.maternal_gains[l] * m[i] + cfg.fetal_gains[l] * cfg.rho * f[i];
      if (cfg.noise_std > 0.0) v += cfg.noise_std * noise(noise_rng);
      rec.leads[l][i] = v;
    }
  }
  rec.fecg_ref = f;
  rec.provenance = {{"generator", "fhnet.synth"}, {"version", 1}, {"config", cfg.to_json()}};
  return rec;
}

std::vector<std::filesystem::path> dataset_outputs(std::size_t count, const std::filesystem::path& out_dir) {
  std::vector<std::filesystem::path> out;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "record_%03zu.csv", i);
    out.push_back(out_dir / name);
    out.push_back(sidecar_path(out.back()));
  }
  out.push_back(out_dir / "manifest.json");
  return out;
}

nlohmann::ordered_json emit_dataset(const std::vector<MixConfig>& configs, const std::filesystem::path& out_dir) {
  for (const auto& c : configs) c.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());
  nlohmann::ordered_json manifest;
  manifest["generator"] = "fhnet.synth";
  manifest["version"] = 1;
  manifest["records"] = nlohmann::ordered_json::array();
  const auto paths = dataset_outputs(configs.size(), out_dir);
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& csv = paths[2 * i];
    write_record(csv, mix_aecg(configs[i]));
    manifest["records"].push_back({{"file", csv.filename().string()}, {"seed", configs[i].seed},
                                   {"config", configs[i].to_json()}});
  }
  write_text_file(paths.back(), manifest.dump(2) + "\n");
  return manifest;
}

nlohmann::ordered_json regenerate_from_manifest(const std::filesystem::path& manifest,
                                                const std::filesystem::path& out_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest.string(), 0, e.what());
  }
  if (!j.contains("records") || !j["records"].is_array())
    throw ParseError(manifest.string(), 0, "manifest has no records array");
  std::vector<MixConfig> configs;
  for (const auto& r : j["records"]) configs.push_back(MixConfig::from_json(r.at("config")));
  return emit_dataset(configs, out_dir);
}

}  // namespace fhnet::synth
