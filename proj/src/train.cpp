#include "fhnet/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "fhnet/json_util.hpp"
#include "fhnet/optim.hpp"

namespace fhnet::train {

using ad::Var;

Var mse_loss(const Var& prediction, const Var& target) { return ad::mse(prediction, target); }

namespace {

void require_same_size(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size())
    throw ShapeError(std::string(what) + ": " + std::to_string(a.size()) + " predictions for " +
                     std::to_string(b.size()) + " targets");
  if (a.empty()) throw ShapeError(std::string(what) + " of empty sequences");
}

}  // namespace

double rmse(std::span<const double> prediction, std::span<const double> target) {
  require_same_size(prediction, target, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += (prediction[i] - target[i]) * (prediction[i] - target[i]);
  return std::sqrt(s / static_cast<double>(target.size()));
}

std::optional<double> r_squared(std::span<const double> prediction, std::span<const double> target) {
  require_same_size(prediction, target, "r_squared");
  const double mean = std::accumulate(target.begin(), target.end(), 0.0) / static_cast<double>(target.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    ss_res += (prediction[i] - target[i]) * (prediction[i] - target[i]);
    ss_tot += (target[i] - mean) * (target[i] - mean);
  }
  if (ss_tot == 0.0) return std::nullopt;
  return 1.0 - ss_res / ss_tot;
}

nlohmann::ordered_json window_to_json(const sigproc::WindowSpec& w) {
  return {{"t_in", w.t_in},
          {"t_out", w.t_out},
          {"stride", w.stride},
          {"alignment", w.alignment == sigproc::TargetAlignment::kTrailing ? "trailing" : "following"}};
}

sigproc::WindowSpec window_from_json(const nlohmann::json& j, const std::string& ctx) {
  reject_unknown_keys(j, {"t_in", "t_out", "stride", "alignment"}, ctx);
  sigproc::WindowSpec w;
  read_optional(j, "t_in", w.t_in, ctx);
  read_optional(j, "t_out", w.t_out, ctx);
  read_optional(j, "stride", w.stride, ctx);
  std::string align = "trailing";
  read_optional(j, "alignment", align, ctx);
  if (align == "trailing")
    w.alignment = sigproc::TargetAlignment::kTrailing;
  else if (align == "following")
    w.alignment = sigproc::TargetAlignment::kFollowing;
  else
    throw ConfigError(ctx + ".alignment must be \"trailing\" or \"following\", got \"" + align + "\"");
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ctx + ": " + e.what());
  }
  return w;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and non-negative");
  if (!(split > 0.0 && split < 1.0)) throw ConfigError("split must lie in (0, 1)");
  if (!(clip >= 0.0)) throw ConfigError("clip must be non-negative");
  window.validate();
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr},       {"seed", seed},
          {"split", split},   {"window", window_to_json(window)}, {"clip", clip}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  const std::string ctx = "train";
  reject_unknown_keys(j, {"epochs", "batch_size", "lr", "seed", "split", "window", "clip"}, ctx);
  TrainConfig c;
  read_optional(j, "epochs", c.epochs, ctx);
  read_optional(j, "batch_size", c.batch_size, ctx);
  read_optional(j, "lr", c.lr, ctx);
  read_optional(j, "seed", c.seed, ctx);
  read_optional(j, "split", c.split, ctx);
  if (j.contains("window")) c.window = window_from_json(j.at("window"), ctx + ".window");
  read_optional(j, "clip", c.clip, ctx);
  c.validate();
  return c;
}

std::vector<NamedRecord> load_records(const std::filesystem::path& path) {
  std::vector<NamedRecord> out;
  for (const auto& f : list_record_files(path)) out.push_back({f.filename().string(), read_record(f)});
  return out;
}

WindowSet make_windows(std::span<const NamedRecord> records, const sigproc::WindowSpec& spec) {
  WindowSet set;
  for (const auto& r : records) {
    if (!r.record.fecg_ref) throw std::invalid_argument(r.name + " has no fecg_ref column");
    sigproc::SignalChannel ref{*r.record.fecg_ref, r.record.sample_rate_hz};
    const auto z = sigproc::zscore(ref);
    AecgRecord normalized = r.record;
    normalized.fecg_ref = z.channel.samples;
    const std::size_t index = set.names.size();
    set.names.push_back(r.name);
    set.target_mean.push_back(z.mean);
    set.target_std.push_back(z.std);
    for (auto& w : sigproc::sliding_windows(normalized, spec)) {
      set.inputs.push_back(std::move(w.encoder_input));
      set.targets.push_back(std::move(w.decoder_target));
      set.record.push_back(index);
    }
  }
  return set;
}

TrainingDiverged::TrainingDiverged(std::size_t epoch, std::size_t batch, double loss)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                         ": loss " + format_double(loss)),
      epoch_(epoch),
      batch_(batch) {}

double teacher_forced_loss(const model::Model& m, const model::ModelParams& params, const WindowSet& windows) {
  if (windows.size() == 0) throw std::invalid_argument("no windows to score");
  std::vector<double> losses(windows.size());
  const auto n = static_cast<std::int64_t>(windows.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto w = static_cast<std::size_t>(i);
    const model::BoundParams p(params, false);
    const Var pred = m.decode_teacher_forced(p, m.encode(p, ad::constant(windows.inputs[w])),
                                             ad::constant(windows.targets[w]));
    losses[w] = mse_loss(pred, ad::constant(windows.targets[w])).value().item();
  }
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

namespace {

void check_dataset(const model::ModelConfig& cfg, std::span<const NamedRecord> records,
                   const sigproc::WindowSpec& spec) {
  if (records.empty()) throw std::invalid_argument("dataset is empty");
  if (cfg.t_in != spec.t_in || cfg.t_out != spec.t_out)
    throw std::invalid_argument("model expects windows " + std::to_string(cfg.t_in) + "-" +
                                std::to_string(cfg.t_out) + ", window spec is " + spec.label());
  for (const auto& r : records)
    if (r.record.lead_count() != cfg.leads)
      throw std::invalid_argument(r.name + " has " + std::to_string(r.record.lead_count()) + " leads, model expects " +
                                  std::to_string(cfg.leads));
}

nlohmann::ordered_json loss_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

TrainResult train(const model::ModelConfig& model_config, const TrainConfig& config,
                  std::span<const NamedRecord> records, const EpochCallback& on_epoch) {
  config.validate();
  model_config.validate();
  check_dataset(model_config, records, config.window);

  std::size_t n_train = records.size();
  if (records.size() >= 2) {
    n_train = static_cast<std::size_t>(std::lround(config.split * static_cast<double>(records.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, records.size() - 1);
  }
  const WindowSet train_set = make_windows(records.subspan(0, n_train), config.window);
  const std::optional<WindowSet> val_set =
      n_train < records.size() ? std::optional(make_windows(records.subspan(n_train), config.window)) : std::nullopt;
  if (train_set.size() == 0) throw std::invalid_argument("training split yields no windows");

  const model::Model m(model_config);
  model::ModelParams params = model::init_params(model_config, config.seed);
  AdamState adam;
  adam.hyper.lr = config.lr;
  std::mt19937_64 rng(config.seed ^ 0x7a11'5eedull);

  TrainResult result;
  auto& log = result.log;
  log["model"] = model_config.to_json();
  log["train"] = config.to_json();
  log["train_records"] = nlohmann::ordered_json::array();
  log["validation_records"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < records.size(); ++i)
    log[i < n_train ? "train_records" : "validation_records"].push_back(records[i].name);
  log["train_windows"] = train_set.size();
  log["validation_windows"] = val_set ? val_set->size() : 0;
  log["parameters"] = params.scalar_count();
  log["epochs"] = nlohmann::ordered_json::array();

  auto make_checkpoint = [&](const EpochStats& s) {
    Checkpoint ck{model_config, params, adam, nlohmann::ordered_json::object()};
    ck.meta["epoch"] = s.epoch;
    ck.meta["train_loss"] = s.train_loss;
    ck.meta["validation_loss"] = loss_json(s.validation_loss);
    ck.meta["train"] = config.to_json();
    return ck;
  };

  std::vector<std::size_t> order(train_set.size());
  double best_score = 0.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      const model::BoundParams p(params, true);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t w = order[k];
        const Var target = ad::constant(train_set.targets[w]);
        const Var pred = m.decode_teacher_forced(p, m.encode(p, ad::constant(train_set.inputs[w])), target);
        const Var loss = mse_loss(pred, target);
        batch_loss += loss.value().item();
        ad::backward(ad::scale(loss, inv));
      }
      if (!std::isfinite(batch_loss)) throw TrainingDiverged(epoch, batch_index + 1, batch_loss);
      auto grads = p.grads();
      for (const auto& g : grads)
        if (!g.all_finite()) throw TrainingDiverged(epoch, batch_index + 1, batch_loss * inv);
      if (config.clip > 0.0) clip_grad_norm(grads, config.clip);
      adam_step(params.tensors(), grads, adam);
      epoch_loss += batch_loss;
    }

    EpochStats stats{epoch, epoch_loss / static_cast<double>(train_set.size()), std::nullopt};
    if (val_set) stats.validation_loss = teacher_forced_loss(m, params, *val_set);
    if (!std::isfinite(stats.train_loss) || (stats.validation_loss && !std::isfinite(*stats.validation_loss)))
      throw TrainingDiverged(epoch, batch_index, stats.validation_loss.value_or(stats.train_loss));
    result.epochs.push_back(stats);
    log["epochs"].push_back(
        {{"epoch", epoch}, {"train_loss", stats.train_loss}, {"validation_loss", loss_json(stats.validation_loss)}});

    const double score = stats.validation_loss.value_or(stats.train_loss);
    if (epoch == 1 || score < best_score) {
      best_score = score;
      result.best = make_checkpoint(stats);
    }
    if (on_epoch) on_epoch(stats);
  }
  result.last = make_checkpoint(result.epochs.back());
  log["best_epoch"] = result.best.meta["epoch"];
  log["selection"] = val_set ? "validation_loss" : "train_loss";
  return result;
}

namespace {

struct Scored {
  double rmse = 0.0;
  std::optional<double> r2;
};

struct Accumulator {
  double rmse_sum = 0.0;
  double r2_sum = 0.0;
  std::size_t windows = 0;
  std::size_t r2_windows = 0;
  std::vector<double> pred;
  std::vector<double> target;

  void add(const Scored& s, std::span<const double> p, std::span<const double> t) {
    rmse_sum += s.rmse;
    ++windows;
    if (s.r2) {
      r2_sum += *s.r2;
      ++r2_windows;
    }
    pred.insert(pred.end(), p.begin(), p.end());
    target.insert(target.end(), t.begin(), t.end());
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["r2"] = r2_windows ? nlohmann::ordered_json(r2_sum / static_cast<double>(r2_windows)) : nullptr;
    j["rmse"] = rmse_sum / static_cast<double>(windows);
    const auto r2c = r_squared(pred, target);
    j["r2_concatenated"] = r2c ? nlohmann::ordered_json(*r2c) : nullptr;
    j["rmse_concatenated"] = rmse(pred, target);
    j["undefined_r2_windows"] = windows - r2_windows;
    return j;
  }
};

}  // namespace

nlohmann::ordered_json evaluate(const Checkpoint& checkpoint, const std::string& checkpoint_id,
                                std::span<const NamedRecord> records, const sigproc::WindowSpec& spec,
                                const EvalOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  const auto& cfg = checkpoint.config;
  check_dataset(cfg, records, spec);
  const WindowSet set = make_windows(records, spec);
  if (set.size() == 0) throw std::invalid_argument("dataset yields no windows");

  const model::Model m(cfg);
  std::vector<Tensor> preds(set.size());
  const auto n = static_cast<std::int64_t>(set.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) preds[static_cast<std::size_t>(i)] = m.predict(checkpoint.params, set.inputs[static_cast<std::size_t>(i)]);

  std::vector<Accumulator> norm(set.names.size()), inv(set.names.size());
  Accumulator norm_all, inv_all;
  for (std::size_t w = 0; w < set.size(); ++w) {
    const std::size_t r = set.record[w];
    const auto p = preds[w].data();
    const auto t = set.targets[w].data();
    std::vector<double> p_inv(p.size()), t_inv(t.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      p_inv[i] = p[i] * set.target_std[r] + set.target_mean[r];
      t_inv[i] = t[i] * set.target_std[r] + set.target_mean[r];
    }
    const Scored sn{rmse(p, t), r_squared(p, t)};
    const Scored si{rmse(p_inv, t_inv), r_squared(p_inv, t_inv)};
    norm[r].add(sn, p, t);
    norm_all.add(sn, p, t);
    inv[r].add(si, p_inv, t_inv);
    inv_all.add(si, p_inv, t_inv);
  }

  nlohmann::ordered_json report;
  report["report_version"] = 1;
  report["checkpoint_id"] = checkpoint_id;
  report["window_spec"] = spec.label();
  report["window"] = window_to_json(spec);
  report["decoding"] = "autoregressive";
  report["aggregation"] =
      "r2 and rmse are means of per-window values (windows with constant targets are left out of r2); "
      "*_concatenated pools every window's samples";
  report["windows"] = set.size();
  report["normalized"] = norm_all.to_json();
  report["inverted"] = inv_all.to_json();
  report["records"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < set.names.size(); ++r)
    report["records"].push_back({{"name", set.names[r]},
                                 {"windows", norm[r].windows},
                                 {"target_mean", set.target_mean[r]},
                                 {"target_std", set.target_std[r]},
                                 {"normalized", norm[r].to_json()},
                                 {"inverted", inv[r].to_json()}});
  report["config"] = cfg.to_json();
  if (options.timing)
    report["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  else
    report["wall_clock_s"] = nullptr;
  return report;
}

}  // namespace fhnet::train
