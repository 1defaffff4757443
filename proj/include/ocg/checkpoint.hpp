// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint archive: 8-byte magic "OCGCKPT1", a little-endian u64 header
// length, a JSON header, then every tensor as raw little-endian float32 at
// the offset recorded in the header's tensor index.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ocg/model.hpp"

namespace ocg {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  nlohmann::json optimizer = nlohmann::json::object();
  std::vector<std::string> train_classes;
  /// Free-form provenance (epoch, metrics).
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  ModelConfig config;
  CheckpointMeta meta;
  std::map<std::string, Tensor<float>> tensors;
  /// FNV-1a digest of the file bytes, hex.
  std::string id;
};

void save_checkpoint(const std::filesystem::path& path, OcgNet<float>& model,
                     const CheckpointMeta& meta = {});

/// Throws IoError for unreadable files and VersionError for foreign or
/// incompatible archives.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies tensors into a model built from the same config. Throws
/// VersionError on a missing tensor or a shape mismatch.
void load_into(OcgNet<float>& model, const Checkpoint& ckpt);

/// Copies the query- and reference-encoder tensors found in `ckpt` into the
/// model and returns how many were copied. The rest of the model keeps its
/// initialization. Throws VersionError on a shape mismatch.
int64_t load_backbones(OcgNet<float>& model, const Checkpoint& ckpt);

/// Throws VersionError when the two configs describe different layouts.
void check_compatible(const ModelConfig& expected, const ModelConfig& found);

}  // namespace ocg
