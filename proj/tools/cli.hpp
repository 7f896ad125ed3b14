#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "fhnet/model.hpp"
#include "fhnet/sigproc.hpp"
#include "fhnet/synth.hpp"
#include "fhnet/train.hpp"

namespace fhnet::cli {

// Environment variable naming the output directory when --out is absent.
inline constexpr const char* kOutDirEnv = "FHNET_OUT_DIR";
inline constexpr const char* kDefaultOutDir = "fhnet_out";

// Everything a pipeline run needs. The window lives at the top level and
// the seed is shared by generation and training, so neither may appear
// inside "train" or "gen.mix".
struct RunConfig {
  std::uint64_t seed = 0;
  model::ModelConfig model;
  train::TrainConfig train;  // train.window and train.seed mirror the top-level values
  std::size_t gen_records = 5;
  synth::MixConfig mix;
  sigproc::PreprocessOptions preprocess;
  std::string data_path;
  std::string checkpoint_path;

  void set_seed(std::uint64_t s);
  nlohmann::ordered_json to_json() const;
  // Missing keys take defaults; a missing window follows the model's T_in/T_out.
  static RunConfig from_json(const nlohmann::json& j);
};

// Per-record generator seed.
std::uint64_t record_seed(std::uint64_t run_seed, std::size_t index);

// Exit codes: 0 success, 1 failure, 2 outputs exist and --force was not given.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fhnet::cli
