#pragma once

// Teacher-forced MSE training with Adam, and autoregressive evaluation.
//
// Targets are z-scored per record before windowing; predictions are scored
// on that normalized scale and again after inverting it.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhnet/autodiff.hpp"
#include "fhnet/checkpoint.hpp"
#include "fhnet/model.hpp"
#include "fhnet/record.hpp"
#include "fhnet/sigproc.hpp"

namespace fhnet::train {

using model::Checkpoint;

ad::Var mse_loss(const ad::Var& prediction, const ad::Var& target);
double rmse(std::span<const double> prediction, std::span<const double> target);
// nullopt when the target is constant (SS_tot == 0).
std::optional<double> r_squared(std::span<const double> prediction, std::span<const double> target);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  double split = 0.8;  // fraction of records used for training
  sigproc::WindowSpec window;
  double clip = 5.0;  // gradient-norm clip, 0 disables

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

nlohmann::ordered_json window_to_json(const sigproc::WindowSpec& w);
sigproc::WindowSpec window_from_json(const nlohmann::json& j, const std::string& ctx);

struct NamedRecord {
  std::string name;
  AecgRecord record;
};

// Reads one CSV or every CSV of a directory, in name order.
std::vector<NamedRecord> load_records(const std::filesystem::path& path);

struct WindowSet {
  std::vector<Tensor> inputs;   // [leads, t_in]
  std::vector<Tensor> targets;  // [t_out], normalized
  std::vector<std::size_t> record;  // index into names
  std::vector<std::string> names;
  std::vector<double> target_mean;  // per record
  std::vector<double> target_std;

  std::size_t size() const { return inputs.size(); }
};

WindowSet make_windows(std::span<const NamedRecord> records, const sigproc::WindowSpec& spec);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch, double loss);
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> validation_loss;
};

struct TrainResult {
  Checkpoint best;  // lowest validation loss (training loss when there is no validation split)
  Checkpoint last;
  std::vector<EpochStats> epochs;
  nlohmann::ordered_json log;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Records are split in order: the first round(split * n) train, the rest
// validate, keeping at least one of each when n >= 2.
TrainResult train(const model::ModelConfig& model_config, const TrainConfig& config,
                  std::span<const NamedRecord> records, const EpochCallback& on_epoch = {});

// Mean teacher-forced MSE over windows.
double teacher_forced_loss(const model::Model& m, const model::ModelParams& params, const WindowSet& windows);

struct EvalOptions {
  bool timing = false;  // wall-clock makes the report differ between runs
};

// Autoregressive decoding of every window. Returns the report JSON.
nlohmann::ordered_json evaluate(const Checkpoint& checkpoint, const std::string& checkpoint_id,
                                std::span<const NamedRecord> records, const sigproc::WindowSpec& spec,
                                const EvalOptions& options = {});

}  // namespace fhnet::train
