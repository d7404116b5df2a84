#pragma once

#include "freehead/networks.hpp"

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace freehead {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Versioned weight archive: magic, JSON header (kind, model config, config
/// hash, tensor table, free-form extras), then raw little-endian float32 data.
struct Checkpoint {
  static constexpr int kVersion = 1;

  std::string kind;           // canonical | gaze | generator | nshot
  ModelConfig config;
  std::string extra = "{}";   // JSON object: loss history, step counts, ...
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
};

/// Appends parameters and buffers of m under prefix.
void store_module(Checkpoint& ckpt, const std::string& prefix, Module<float>& m);
/// Copies stored values into m. Every parameter and buffer must be present
/// with a matching shape.
void load_module(const Checkpoint& ckpt, const std::string& prefix, Module<float>& m);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Refuses a checkpoint whose config hash differs from expected, unless forced.
void check_config(const Checkpoint& ckpt, const ModelConfig& expected, bool force = false);

}  // namespace freehead
