#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <ostream>
#include <stdexcept>

#include <CLI11.hpp>

#include "fhnet/checkpoint.hpp"
#include "fhnet/interpret.hpp"
#include "fhnet/json_util.hpp"
#include "fhnet/record.hpp"

namespace fhnet::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

class OutputsExist : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ojson preprocess_to_json(const sigproc::PreprocessOptions& p) {
  return {{"median_w1_s", p.median_w1_s}, {"median_w2_s", p.median_w2_s}, {"dwt_levels", p.dwt_levels}};
}

sigproc::PreprocessOptions preprocess_from_json(const nlohmann::json& j) {
  const std::string ctx = "config.preprocess";
  reject_unknown_keys(j, {"median_w1_s", "median_w2_s", "dwt_levels"}, ctx);
  sigproc::PreprocessOptions p;
  read_optional(j, "median_w1_s", p.median_w1_s, ctx);
  read_optional(j, "median_w2_s", p.median_w2_s, ctx);
  read_optional(j, "dwt_levels", p.dwt_levels, ctx);
  if (!(p.median_w1_s > 0.0) || !(p.median_w2_s > 0.0)) throw ConfigError(ctx + ": median windows must be positive");
  if (p.dwt_levels < 1) throw ConfigError(ctx + ".dwt_levels must be at least 1");
  return p;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string r2_text(const nlohmann::json& v) { return v.is_null() ? "undefined" : fmt("%.4f", v.get<double>()); }

}  // namespace

std::uint64_t record_seed(std::uint64_t run_seed, std::size_t index) {
  // splitmix64 finalizer over (seed, index)
  std::uint64_t z = run_seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  mix.seed = s;
}

ojson RunConfig::to_json() const {
  ojson j;
  j["seed"] = seed;
  j["model"] = model.to_json();
  auto t = train.to_json();
  t.erase("window");
  t.erase("seed");
  j["train"] = std::move(t);
  j["window"] = train::window_to_json(train.window);
  auto m = mix.to_json();
  m.erase("seed");
  j["gen"] = {{"records", gen_records}, {"mix", std::move(m)}};
  j["preprocess"] = preprocess_to_json(preprocess);
  j["paths"] = {{"data", data_path}, {"checkpoint", checkpoint_path}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  const std::string ctx = "config";
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown_keys(j, {"seed", "model", "train", "window", "gen", "preprocess", "paths"}, ctx);
  RunConfig c;
  read_optional(j, "seed", c.seed, ctx);
  if (j.contains("model")) c.model = model::ModelConfig::from_json(j.at("model"));
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.is_object() && (t.contains("window") || t.contains("seed")))
      throw ConfigError("config.train: window and seed belong at the top level");
    c.train = train::TrainConfig::from_json(t);
  }
  if (j.contains("window")) {
    c.train.window = train::window_from_json(j.at("window"), ctx + ".window");
  } else {
    c.train.window.t_in = c.model.t_in;
    c.train.window.t_out = c.model.t_out;
    c.train.window.stride = c.model.t_out;
  }
  if (c.train.window.t_in != c.model.t_in || c.train.window.t_out != c.model.t_out)
    throw ConfigError("config.window " + c.train.window.label() + " does not match the model's T_in-T_out " +
                      std::to_string(c.model.t_in) + "-" + std::to_string(c.model.t_out));
  if (j.contains("gen")) {
    const auto& g = j.at("gen");
    reject_unknown_keys(g, {"records", "mix"}, ctx + ".gen");
    read_optional(g, "records", c.gen_records, ctx + ".gen");
    if (g.contains("mix")) {
      if (g.at("mix").is_object() && g.at("mix").contains("seed"))
        throw ConfigError("config.gen.mix: seed belongs at the top level");
      c.mix = synth::MixConfig::from_json(g.at("mix"));
    }
  }
  if (c.gen_records < 1) throw ConfigError("config.gen.records must be at least 1");
  if (c.mix.leads != c.model.leads)
    throw ConfigError("config.gen.mix.leads (" + std::to_string(c.mix.leads) + ") differs from model.leads (" +
                      std::to_string(c.model.leads) + ")");
  if (j.contains("preprocess")) c.preprocess = preprocess_from_json(j.at("preprocess"));
  if (j.contains("paths")) {
    reject_unknown_keys(j.at("paths"), {"data", "checkpoint"}, ctx + ".paths");
    read_optional(j.at("paths"), "data", c.data_path, ctx + ".paths");
    read_optional(j.at("paths"), "checkpoint", c.checkpoint_path, ctx + ".paths");
  }
  c.set_seed(c.seed);
  return c;
}

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string config;
  bool force = false;
  std::string out;

  fs::path out_dir() const {
    if (!out.empty()) return out;
    if (const char* e = std::getenv(kOutDirEnv); e && *e) return e;
    return kDefaultOutDir;
  }

  RunConfig run_config() const {
    RunConfig c;
    if (!config.empty()) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(read_text_file(config));
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + config + ": " + e.what());
      }
      try {
        c = RunConfig::from_json(j);
      } catch (const std::exception& e) {
        throw ConfigError("config file " + config + ": " + e.what());
      }
    }
    if (seed_given) c.set_seed(seed);
    return c;
  }
};

void guard_outputs(const std::vector<fs::path>& outputs, bool force) {
  if (force) return;
  std::vector<fs::path> existing;
  for (const auto& p : outputs)
    if (fs::exists(p)) existing.push_back(p);
  if (existing.empty()) return;
  std::string msg = "refusing to overwrite " + existing.front().string();
  if (existing.size() > 1) msg += " and " + std::to_string(existing.size() - 1) + " more";
  throw OutputsExist(msg + " (pass --force)");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Every declared output must exist and parse before the command reports success.
void verify_outputs(const std::vector<fs::path>& outputs) {
  for (const auto& p : outputs) {
    if (!fs::is_regular_file(p)) throw IoError("declared output was not written: " + p.string());
    const auto ext = p.extension().string();
    if (ext == ".json") {
      if (!nlohmann::json::accept(read_text_file(p))) throw IoError("output is not valid JSON: " + p.string());
    } else if (ext == ".fhnet") {
      (void)model::load_checkpoint(p);
    } else if (fs::file_size(p) == 0) {
      throw IoError("output is empty: " + p.string());
    }
  }
}

std::string require_path(const std::string& flag, const std::string& fallback, const char* what) {
  if (!flag.empty()) return flag;
  if (!fallback.empty()) return fallback;
  throw ConfigError(std::string("no ") + what + " given");
}

struct Loaded {
  model::Checkpoint checkpoint;
  std::string id;
};

Loaded load_checkpoint_with_id(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such checkpoint: " + path.string());
  const std::string bytes = read_text_file(path);
  return {model::deserialize_checkpoint(bytes, path.string()), model::content_id(bytes)};
}

int cmd_gen(const Globals& g, const std::optional<std::size_t>& records, const std::string& manifest,
            std::ostream& out) {
  const RunConfig cfg = g.run_config();
  const fs::path dir = g.out_dir();
  std::size_t n = records.value_or(cfg.gen_records);
  if (!manifest.empty()) {
    if (!fs::exists(manifest)) throw IoError("no such manifest: " + manifest);
    const auto j = nlohmann::json::parse(read_text_file(manifest), nullptr, false);
    if (j.is_discarded() || !j.contains("records") || !j["records"].is_array())
      throw ParseError(manifest, 0, "manifest has no records array");
    n = j["records"].size();
  }
  if (n < 1) throw ConfigError("gen needs at least one record");
  const auto outputs = synth::dataset_outputs(n, dir);
  guard_outputs(outputs, g.force);
  if (!manifest.empty()) {
    // Read before anything is written: the manifest may be one of the outputs.
    const std::string text = read_text_file(manifest);
    make_dir(dir);
    const fs::path tmp = dir / ".manifest.in";
    write_text_file(tmp, text);
    try {
      synth::regenerate_from_manifest(tmp, dir);
    } catch (...) {
      fs::remove(tmp);
      throw;
    }
    fs::remove(tmp);
  } else {
    std::vector<synth::MixConfig> configs(n, cfg.mix);
    for (std::size_t i = 0; i < n; ++i) configs[i].seed = record_seed(cfg.seed, i);
    make_dir(dir);
    synth::emit_dataset(configs, dir);
  }
  verify_outputs(outputs);
  out << "wrote " << n << " records and " << outputs.back().string() << "\n";
  return 0;
}

int cmd_preprocess(const Globals& g, const std::string& in, std::ostream& out) {
  const RunConfig cfg = g.run_config();
  const fs::path src = require_path(in, cfg.data_path, "input (--in or paths.data)");
  const fs::path dir = g.out_dir();
  const auto files = list_record_files(src);
  std::vector<fs::path> outputs;
  for (const auto& f : files) {
    outputs.push_back(dir / f.filename());
    outputs.push_back(sidecar_path(outputs.back()));
  }
  guard_outputs(outputs, g.force);
  std::vector<AecgRecord> done;
  for (const auto& f : files) {
    try {
      done.push_back(sigproc::preprocess(read_record(f), cfg.preprocess));
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error(f.string() + ": " + e.what());
    }
  }
  make_dir(dir);
  for (std::size_t i = 0; i < files.size(); ++i) write_record(outputs[2 * i], done[i]);
  verify_outputs(outputs);
  out << "preprocessed " << files.size() << " records into " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& data, std::ostream& out) {
  const RunConfig cfg = g.run_config();
  const fs::path src = require_path(data, cfg.data_path, "dataset (--data or paths.data)");
  const fs::path dir = g.out_dir();
  const std::vector<fs::path> outputs{dir / "checkpoint.fhnet", dir / "train_log.json", dir / "run_config.json"};
  guard_outputs(outputs, g.force);
  const auto records = train::load_records(src);
  const auto result = train::train(cfg.model, cfg.train, records, [&out](const train::EpochStats& s) {
    out << "epoch " << s.epoch << " train_loss " << fmt("%.6f", s.train_loss) << " validation_loss "
        << (s.validation_loss ? fmt("%.6f", *s.validation_loss) : std::string("n/a")) << "\n";
  });
  make_dir(dir);
  model::save_checkpoint(outputs[0], result.best);
  write_text_file(outputs[1], result.log.dump(2) + "\n");
  write_text_file(outputs[2], cfg.to_json().dump(2) + "\n");
  verify_outputs(outputs);
  out << outputs[0].string() << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& data, bool timing,
             std::ostream& out) {
  const RunConfig cfg = g.run_config();
  const fs::path ck_path = require_path(checkpoint, cfg.checkpoint_path, "checkpoint (--checkpoint or paths.checkpoint)");
  const fs::path src = require_path(data, cfg.data_path, "dataset (--data or paths.data)");
  const fs::path dir = g.out_dir();
  const std::vector<fs::path> outputs{dir / "eval_report.json"};
  guard_outputs(outputs, g.force);
  const auto ck = load_checkpoint_with_id(ck_path);
  sigproc::WindowSpec spec = cfg.train.window;
  if (ck.checkpoint.meta.contains("train") && ck.checkpoint.meta["train"].contains("window"))
    spec = train::window_from_json(ck.checkpoint.meta["train"]["window"], ck_path.string() + " window");
  const auto files = list_record_files(src);
  std::vector<train::NamedRecord> records;
  for (const auto& f : files) {
    auto rec = read_record(f);
    if (!rec.fecg_ref) throw std::runtime_error(f.string() + " has no fecg_ref column; evaluation needs the reference");
    records.push_back({f.filename().string(), std::move(rec)});
  }
  const auto report = train::evaluate(ck.checkpoint, ck.id, records, spec, {timing});
  make_dir(dir);
  write_text_file(outputs[0], report.dump(2) + "\n");
  verify_outputs(outputs);
  out << "windows " << report["windows"].get<std::size_t>() << " (" << spec.label() << ")\n";
  for (const char* scale : {"normalized", "inverted"})
    out << scale << " R2 " << r2_text(report[scale]["r2"]) << " RMSE "
        << fmt("%.4f", report[scale]["rmse"].get<double>()) << " concatenated R2 "
        << r2_text(report[scale]["r2_concatenated"]) << " RMSE "
        << fmt("%.4f", report[scale]["rmse_concatenated"].get<double>()) << "\n";
  return 0;
}

struct AttributeArgs {
  std::string checkpoint;
  std::string data;
  double start_s = 0.0;
  double duration_s = 0.0;
  double window_s = 0.25;
  std::size_t steps = 128;
  long long sample = -1;
  std::string surrogate = "model";
};

// F(x) = sum of w[l, t] x[l, t] with fixed positive weights.
interpret::ScalarFn linear_surrogate(std::size_t leads, std::size_t t_in) {
  Tensor w({leads, t_in});
  for (std::size_t l = 0; l < leads; ++l)
    for (std::size_t t = 0; t < t_in; ++t)
      w[l * t_in + t] = static_cast<double>(l + 1) / static_cast<double>(leads) *
                        static_cast<double>(t + 1) / static_cast<double>(t_in);
  return [w](const ad::Var& x) { return ad::sum(ad::mul(x, ad::constant(w))); };
}

int cmd_attribute(const Globals& g, const AttributeArgs& a, std::ostream& out) {
  const RunConfig cfg = g.run_config();
  const fs::path ck_path = require_path(a.checkpoint, cfg.checkpoint_path, "checkpoint (--checkpoint or paths.checkpoint)");
  const fs::path src = require_path(a.data, cfg.data_path, "record (--data or paths.data)");
  if (fs::is_directory(src)) throw ConfigError("attribute takes one record file, got directory " + src.string());
  const fs::path dir = g.out_dir();
  const std::vector<fs::path> outputs{dir / "attribution.csv", dir / "attribution.json", dir / "attention.json",
                                      dir / "attention.csv"};
  guard_outputs(outputs, g.force);

  const auto ck = load_checkpoint_with_id(ck_path);
  const model::Model m(ck.checkpoint.config);
  const auto& mc = ck.checkpoint.config;
  const AecgRecord rec = read_record(src);
  if (rec.lead_count() != mc.leads)
    throw std::runtime_error(src.string() + " has " + std::to_string(rec.lead_count()) + " leads, the checkpoint expects " +
                             std::to_string(mc.leads));
  const double hz = rec.sample_rate_hz;
  if (a.start_s < 0.0 || a.duration_s < 0.0) throw ConfigError("--start-s and --duration-s must be non-negative");
  const auto start = static_cast<std::size_t>(std::llround(a.start_s * hz));
  if (start >= rec.length()) throw ConfigError("--start-s lies past the end of " + src.string());
  const std::size_t count =
      a.duration_s > 0.0 ? static_cast<std::size_t>(std::llround(a.duration_s * hz)) : rec.length() - start;
  if (start + count > rec.length())
    throw ConfigError("requested span runs past the end of " + src.string() + " (" + std::to_string(rec.length()) +
                      " samples)");
  Tensor x({mc.leads, count});
  for (std::size_t l = 0; l < mc.leads; ++l)
    for (std::size_t t = 0; t < count; ++t) x[l * count + t] = rec.leads[l][start + t];

  std::optional<std::size_t> sample;
  if (a.sample >= 0) sample = static_cast<std::size_t>(a.sample);
  interpret::RecordAttribution ra;
  std::string target;
  if (a.surrogate == "linear") {
    ra = interpret::attribute_record(linear_surrogate(mc.leads, mc.t_in), mc.t_in, x, a.steps);
    target = "linear surrogate";
  } else {
    ra = interpret::attribute_record(m, ck.checkpoint.params, x, a.steps, sample);
    target = sample ? "predicted sample " + std::to_string(*sample) : "sum of the autoregressive prediction";
  }
  auto table = interpret::window_lead_attribution(ra.attribution, hz, a.window_s);
  table.meta["checkpoint_id"] = ck.id;
  table.meta["record"] = src.filename().string();
  table.meta["start_sample"] = start;
  table.meta["samples"] = count;
  table.meta["steps"] = a.steps;
  table.meta["baseline"] = "zeros";
  table.meta["target"] = target;
  table.meta["window_starts"] = ra.window_starts;
  table.meta["max_completeness_gap"] = ra.max_gap;
  table.meta["max_relative_completeness_gap"] = ra.max_relative_gap;

  ojson attention;
  attention["checkpoint_id"] = ck.id;
  attention["record"] = src.filename().string();
  attention["windows"] = ojson::array();
  std::string attention_csv;
  for (std::size_t s : ra.window_starts) {
    Tensor w({mc.leads, mc.t_in});
    for (std::size_t l = 0; l < mc.leads; ++l)
      for (std::size_t t = 0; t < mc.t_in; ++t) w[l * mc.t_in + t] = x[l * count + s + t];
    const auto snap = interpret::export_attention(m, ck.checkpoint.params, w, start + s);
    attention["windows"].push_back(snap.to_json());
    attention_csv += snap.to_csv(attention_csv.empty());
  }

  make_dir(dir);
  const std::string csv = table.to_csv();
  write_text_file(outputs[0], csv);
  write_text_file(outputs[1], table.to_json().dump(2) + "\n");
  write_text_file(outputs[2], attention.dump(2) + "\n");
  write_text_file(outputs[3], attention_csv);
  verify_outputs(outputs);
  out << csv;
  return 0;
}

constexpr const char* kGlobals =
    "\nGlobal flags --seed, --config, --force and --out may follow the subcommand; see fhnet --help.\n";

constexpr const char* kRecordFormat = R"~(Record files:
  CSV with header t,lead_1,...,lead_L[,fecg_ref], one row per sample, t in
  seconds and strictly increasing. Each CSV has a sidecar JSON of the same
  stem: {"sample_rate_hz", "lead_count", "has_reference", "provenance",
  "preprocessing": [stage labels in order]}.
)~";

std::string global_footer() {
  return std::string(R"~(
Exit codes: 0 success, 1 failure, 2 outputs exist and --force was not given.
Output directory: --out, else $)~") +
         kOutDirEnv + ", else ./" + kDefaultOutDir + R"~(.

Run config (--config): a JSON object. Every key is optional and unknown keys
are rejected. "window" and "seed" are top-level only. A missing window uses the
model's T_in and T_out with stride T_out. Defaults:
)~" + RunConfig{}.to_json().dump(2) +
         R"~(

model.adjacency is "identity", "fully-connected", "ring" or "custom"; "custom" reads
model.custom_adjacency as an L x L array.

)~" + kRecordFormat;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fhnet: fetal ECG extraction with a graph-attention encoder-decoder", "fhnet"};
  app.footer(global_footer());
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "seed for generation and training (overrides the config)");
  app.add_option("--config", g.config, "run config JSON file");
  app.add_flag("--force", g.force, "overwrite existing outputs");
  app.add_option("--out", g.out, "output directory");

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->fallthrough();
  std::size_t gen_records = 0;
  std::string manifest;
  auto* gen_n = gen->add_option("--records", gen_records, "number of records (default gen.records)")
                    ->check(CLI::PositiveNumber);
  gen->add_option("--manifest", manifest, "regenerate the records listed in this manifest");
  gen->footer(R"~(
Writes record_NNN.csv plus sidecar per record and manifest.json:
  {"generator", "version", "records": [{"file", "seed", "config"}]}.
Record i uses a seed derived from the run seed and i.
)~" + std::string(kRecordFormat) + std::string(kGlobals));

  auto* pre = app.add_subcommand("preprocess", "median baseline removal, wavelet denoising, z-score per lead");
  pre->fallthrough();
  std::string pre_in;
  pre->add_option("--in", pre_in, "record CSV or directory of CSVs (default paths.data)");
  pre->footer(R"~(
Writes one CSV per input under the output directory, same file names. The
sidecar's "preprocessing" list gains "median(w1,w2)", "dwt(levels,db4,soft)"
and "zscore"; earlier stages are kept. The fecg_ref column passes through.
)~" + std::string(kRecordFormat) + std::string(kGlobals));

  auto* tr = app.add_subcommand("train", "teacher-forced training with Adam");
  tr->fallthrough();
  std::string tr_data;
  tr->add_option("--data", tr_data, "record CSV or directory (default paths.data)");
  tr->footer(R"~(
Prints one line per epoch and, on success, the checkpoint path. Writes
checkpoint.fhnet (lowest validation loss), train_log.json
  {"model", "train", "train_records", "validation_records", "train_windows",
   "validation_windows", "parameters", "epochs": [{"epoch", "train_loss",
   "validation_loss"}], "best_epoch", "selection"}
and run_config.json (the run config with every default filled in).
Records are split in name order; targets are z-scored per record.
)~" + std::string(kGlobals));

  auto* ev = app.add_subcommand("eval", "autoregressive evaluation");
  ev->fallthrough();
  std::string ev_ck, ev_data;
  bool timing = false;
  ev->add_option("--checkpoint", ev_ck, "checkpoint file (default paths.checkpoint)");
  ev->add_option("--data", ev_data, "record CSV or directory with fecg_ref (default paths.data)");
  ev->add_flag("--timing", timing, "record wall-clock seconds in the report");
  ev->footer(R"~(
Prints R2 and RMSE to 4 decimals and writes eval_report.json:
  {"report_version", "checkpoint_id", "window_spec": "T_in-T_out", "window",
   "decoding", "aggregation", "windows",
   "normalized" and "inverted": {"r2", "rmse", "r2_concatenated",
     "rmse_concatenated", "undefined_r2_windows"},
   "records": [{"name", "windows", "target_mean", "target_std",
     "normalized", "inverted"}],
   "config", "wall_clock_s"}
r2 is the mean of per-window R2 (null when no window has a defined R2);
wall_clock_s is null unless --timing. The window comes from the checkpoint.
)~" + std::string(kGlobals));

  auto* at = app.add_subcommand("attribute", "Integrated Gradients lead attribution and spatial attention export");
  at->fallthrough();
  AttributeArgs aa;
  at->add_option("--checkpoint", aa.checkpoint, "checkpoint file (default paths.checkpoint)");
  at->add_option("--data", aa.data, "one preprocessed record CSV (default paths.data)");
  at->add_option("--start-s", aa.start_s, "span start in seconds")->capture_default_str();
  at->add_option("--duration-s", aa.duration_s, "span length in seconds, 0 for the rest of the record")
      ->capture_default_str();
  at->add_option("--window-s", aa.window_s, "table window in seconds")->capture_default_str()->check(CLI::PositiveNumber);
  at->add_option("--steps", aa.steps, "Riemann steps along the path")->capture_default_str()->check(CLI::PositiveNumber);
  at->add_option("--sample", aa.sample, "attribute one predicted sample instead of the sum");
  at->add_option("--surrogate", aa.surrogate, "target: model or linear")
      ->capture_default_str()
      ->check(CLI::IsMember({"model", "linear"}));
  at->footer(R"~(
The span is tiled with encoder windows; zero baseline. Prints and writes
attribution.csv: header lead,0.00s-0.25s,...; rows Lead_1..Lead_L; each
  column min-max scaled over leads, 4 decimals.
attribution.json: {"window_s", "sample_rate_hz", "columns", "rows":
  [{"lead", "values"}], "degenerate": [per column], "meta"}.
attention.json: {"checkpoint_id", "record", "windows": [{"window_offset",
  "row_semantics", "blocks": [{"block", "spatial_scores", "p_eff",
  "argmax"}]}]}, matrices as [K][L][L].
attention.csv: window_offset,block,k,row,col,score,p_eff.
)~" + std::string(kGlobals));

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  g.seed_given = app.get_option("--seed")->count() > 0;

  try {
    if (gen->parsed()) return cmd_gen(g, gen_n->count() ? std::optional<std::size_t>(gen_records) : std::nullopt, manifest, out);
    if (pre->parsed()) return cmd_preprocess(g, pre_in, out);
    if (tr->parsed()) return cmd_train(g, tr_data, out);
    if (ev->parsed()) return cmd_eval(g, ev_ck, ev_data, timing, out);
    if (at->parsed()) return cmd_attribute(g, aa, out);
  } catch (const OutputsExist& e) {
    err << "fhnet: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "fhnet: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace fhnet::cli
