#pragma once

// Binary checkpoint: 8-byte magic, u64 header length, compact JSON header
// (config, parameter names and shapes, optimizer hyperparameters, metadata),
// then every tensor as a u64 element count followed by little-endian f64s.
// Parameters come first, then Adam first and second moments when present.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "fhnet/model.hpp"
#include "fhnet/optim.hpp"

namespace fhnet::model {

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  std::optional<AdamState> optimizer;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

std::string serialize_checkpoint(const Checkpoint& ck);
// `origin` names the source in error messages.
Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& origin);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// 16 hex digits of the FNV-1a 64-bit hash of the serialized bytes.
std::string content_id(std::string_view bytes);

}  // namespace fhnet::model
