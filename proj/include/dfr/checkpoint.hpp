#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

namespace dfr {

inline constexpr uint32_t kCheckpointVersion = 1;

// A directory holding params.bin (named little-endian arrays with dtype and shape, sorted by
// name, followed by an FNV-1a checksum) and meta.json (stage, epoch, seed, config snapshot, ...).
struct Checkpoint {
  std::map<std::string, torch::Tensor> params;
  nlohmann::json meta = nlohmann::json::object();

  bool has_prefix(const std::string& prefix) const;
  std::string stage() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
// Missing directory -> RuntimeFailure; bad magic, checksum or truncation -> RuntimeFailure with
// an integrity diagnostic; version mismatch -> RuntimeFailure naming both versions.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies every parameter and buffer of `module` into the map as "<prefix>.<name>".
void export_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& module);
// Strict inverse of export_module: every module tensor must be present with the same shape.
void import_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& module);

// Hash over names, dtypes, shapes and raw bytes.
uint64_t tensor_map_hash(const std::map<std::string, torch::Tensor>& params);
uint64_t module_hash(const torch::nn::Module& module);

}  // namespace dfr
