#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "aoda/trainer.hpp"

namespace aoda {

/// Serialized training state: parameters and buffers of all five networks, Adam moments,
/// pool contents, random stream states, counters, configs and vocabulary.
///
/// File layout (little-endian): "AODACKPT", u32 version, u64 metadata length, metadata JSON,
/// u64 tensor count, tensor records (name, dtype, shape, raw bytes), then a SHA-256 of all
/// preceding bytes.
struct CheckpointBundle {
  nlohmann::json meta;
  std::map<std::string, torch::Tensor> tensors;

  int epoch() const;
  int64_t step() const;
  std::string fingerprint() const;
  ClassVocabulary vocabulary() const;
  ModelConfig model() const;
  TrainConfig train() const;
};

/// SHA-256 (hex) over the architecture config and vocabulary.
std::string config_fingerprint(const ModelConfig& model, const ClassVocabulary& vocabulary);

CheckpointBundle capture_checkpoint(const TrainingState& state, const BatchSampler* sampler = nullptr);
void write_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);
/// Throws IntegrityError for truncated or corrupted files.
CheckpointBundle read_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const TrainingState& state, const std::filesystem::path& path,
                     const BatchSampler* sampler = nullptr);

struct LoadOptions {
  std::optional<std::string> expected_fingerprint;
  bool force = false;
};

/// read_checkpoint plus the fingerprint guard: a mismatch throws FingerprintMismatchError
/// unless options.force is set.
CheckpointBundle load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {});

/// Copies everything in the bundle into an existing state (and sampler). Throws IntegrityError
/// naming the offending field when the vocabulary size or a tensor shape differs.
void restore_training_state(const CheckpointBundle& bundle, TrainingState& state, BatchSampler* sampler = nullptr);

/// Rebuilds the five networks from a bundle (inference use).
Networks load_networks(const CheckpointBundle& bundle);

std::string file_sha256(const std::filesystem::path& path);
std::string sha256_hex(const std::string& data);

}  // namespace aoda
