#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace easyphoto {

/// Dense float tensor; values are stored flat in row-major order.
struct Tensor {
  std::vector<std::int64_t> shape;
  Eigen::ArrayXf values;

  std::int64_t element_count() const;
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.values.size() == b.values.size() &&
           (a.values == b.values).all();
  }
};

using TensorMap = std::map<std::string, Tensor>;

struct LoraCheckpoint {
  std::string checkpoint_id;
  int stage = 0;
  TensorMap tensors;
};

struct MergedLora {
  TensorMap tensors;
  /// (checkpoint_id, normalized weight) in input order; weights sum to 1.
  std::vector<std::pair<std::string, double>> provenance;

  /// Mean over every element of every tensor (keys visited in order).
  double mean_value() const;
};

/// Per-key weighted mean sum_i w_i t_i / sum_i w_i.
///
/// Accumulation runs in a canonical (checkpoint_id, weight) order so the result is
/// bit-identical under paired reordering of the inputs.
/// Throws LengthMismatch, KeyMismatch, ShapeMismatch, AllZeroWeights, InvalidArgument.
MergedLora merge_lora(std::span<const LoraCheckpoint> checkpoints, std::span<const double> weights);

/// A single checkpoint viewed as a merge with weight 1.
MergedLora as_merged(const LoraCheckpoint& checkpoint);

// On-disk format: per run directory, checkpoint-<stage>.json holds the metadata and a
// tensor index; every tensor lives in checkpoint-<stage>.<sanitized key>.f32 as raw
// little-endian binary32. Merged weights use merged.json / merged.<key>.f32.

std::string sanitize_key(const std::string& key);

std::filesystem::path write_checkpoint(const std::filesystem::path& dir, const LoraCheckpoint& ckpt);
LoraCheckpoint read_checkpoint(const std::filesystem::path& json_path);

/// All checkpoint-*.json files in dir, ordered by stage.
std::vector<LoraCheckpoint> read_checkpoints(const std::filesystem::path& dir);

std::filesystem::path write_merged(const std::filesystem::path& dir, const MergedLora& merged);
MergedLora read_merged(const std::filesystem::path& dir);

}  // namespace easyphoto
