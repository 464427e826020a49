#pragma once

#include "easyphoto/adapters.hpp"
#include "easyphoto/diffusion.hpp"
#include "easyphoto/lora.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace easyphoto {

inline constexpr std::string_view kFixedPrompt = "easyphoto_face, easyphoto, 1person";
inline constexpr int kProcessedSide = 512;

struct StageParams {
  double denoise_strength = 0.7;
  int steps = 30;
};

inline constexpr StageParams kFirstStageDefaults{0.7, 30};
inline constexpr StageParams kSecondStageDefaults{0.3, 20};

struct TrainingConfig {
  std::string user_id;
  double crop_ratio = 1.5;
  int stages = 4;
  std::string prompt{kFixedPrompt};
  /// Expert switch; without it a non-default prompt is rejected.
  bool allow_prompt_override = false;
  std::vector<Image> validation_templates;
  int top_k = 2;
  int min_images = 5;
  int max_images = 20;
  /// Skips the image-count bounds.
  bool force = false;
  double ear_expand_ratio = kDefaultEarExpandRatio;
  StageParams validation = kFirstStageDefaults;
  double canny_weight = 1.0;
  std::uint64_t validation_seed = 0;

  /// Throws NotEnoughImages, TooManyImages or InvalidArgument.
  void check(size_t image_count) const;
};

struct PreprocessResult {
  std::vector<Image> images;
  /// Index into the input list for every processed image.
  std::vector<size_t> source_index;
  std::vector<std::string> warnings;
};

/// Largest face -> square crop of crop_ratio * bbox height -> matte over white ->
/// retouch -> 512x512. Images without a face are skipped with a warning.
/// Throws NoFacesFound when nothing survives.
PreprocessResult preprocess_training_images(const std::vector<Image>& images,
                                            const TrainingConfig& cfg,
                                            const AdapterRegistry& adapters);

/// Square crop window used by preprocessing, clamped inside the image.
BBox training_crop_window(const BBox& face, double crop_ratio, Eigen::Index height,
                          Eigen::Index width);

class LoraTrainer {
 public:
  virtual ~LoraTrainer() = default;
  /// cfg.stages checkpoints with stage indices 0..stages-1.
  virtual std::vector<LoraCheckpoint> train(const std::vector<Image>& processed,
                                            const TrainingConfig& cfg) const = 0;
  virtual std::string id() const = 0;
};

/// Deterministic stand-in: splitmix64 streams keyed by (user_id, stage) fill
/// lora.down [16,8] and lora.up [8,16].
class MockTrainer final : public LoraTrainer {
 public:
  std::vector<LoraCheckpoint> train(const std::vector<Image>& processed,
                                    const TrainingConfig& cfg) const override;
  std::string id() const override { return "mock"; }
};

std::vector<LoraCheckpoint> train_lora(const std::vector<Image>& processed,
                                       const TrainingConfig& cfg, const LoraTrainer& trainer);

struct CheckpointScores {
  std::string checkpoint_id;
  int stage = 0;
  std::vector<double> scores;  // per template
  std::vector<bool> failed;    // per template
  double mean = 0.0;
};

struct ValidationReport {
  std::vector<CheckpointScores> checkpoints;
  /// Generated validation image per [checkpoint][template].
  std::vector<std::vector<Image>> images;

  struct Best {
    size_t checkpoint = 0;
    int stage = 0;
    size_t template_index = 0;
    double score = -1.0;
  } best;

  bool empty() const { return checkpoints.empty() || images.empty(); }
};

/// {"v":1, "checkpoints":[...], "scores":[[...]], "best":{stage,template,score}}
std::string report_json(const ValidationReport& report);

/// Canny-controlled inpaint of every template's face with each checkpoint attached,
/// scored by the best identity similarity to the reference images. A failing cell
/// scores -1 and is flagged.
ValidationReport validate_checkpoints(const std::vector<LoraCheckpoint>& checkpoints,
                                      const TrainingConfig& cfg,
                                      const std::vector<Image>& reference_images,
                                      const AdapterRegistry& adapters,
                                      const DiffusionBackend& backend);

/// Top-k checkpoints by mean score (ties: lower stage) merged with weights
/// proportional to their scores clamped at 1e-6.
MergedLora ensemble_merge(const ValidationReport& report,
                          const std::vector<LoraCheckpoint>& checkpoints, int top_k);

/// Normalized ensemble weights for mean scores, in rank order; exposed for testing.
std::vector<double> ensemble_weights(std::vector<double> ranked_scores);

/// Highest-scoring validation image; ties go to the lower stage, then lower template.
Image select_face_id_image(const ValidationReport& report);

/// Best cosine similarity between the largest face of `generated` and the references;
/// -1 when no face is found or the crop is degenerate.
double identity_reward(const Image& generated, const std::vector<FaceEmbedding>& references,
                       const AdapterRegistry& adapters);

/// Reward hook for an external RL fine-tuning loop.
using RewardFn = std::function<double(const Image&)>;
RewardFn make_identity_reward(std::vector<FaceEmbedding> references, AdapterRegistry adapters);

/// Embeddings of the largest face in each image; images that fail are skipped.
std::vector<FaceEmbedding> reference_embeddings(const std::vector<Image>& images,
                                                const AdapterRegistry& adapters);

// ---------------------------------------------------------------------------
// Whole training run with on-disk artifacts.
// ---------------------------------------------------------------------------

enum class TrainingPhase { Preprocessing, Training, Validating, Merging };

const char* to_string(TrainingPhase phase) noexcept;

struct TrainingContext {
  AdapterRegistry adapters = AdapterRegistry::reference();
  std::shared_ptr<const DiffusionBackend> backend = std::make_shared<MockBackend>();
  std::shared_ptr<const LoraTrainer> trainer = std::make_shared<MockTrainer>();
};

struct TrainingArtifacts {
  std::filesystem::path user_dir;
  std::filesystem::path report_json;
  std::filesystem::path face_id_png;
  std::filesystem::path ensemble_dir;
  double best_score = -1.0;
  /// Input index of every processed image.
  std::vector<size_t> source_index;
  std::vector<std::string> warnings;
};

/// Called on phase entry with overall progress in [0,1].
using TrainingProgressFn = std::function<void(TrainingPhase, double)>;

/// Writes processed/, lora/, validation/val-<stage>-<template>.png, report.json,
/// face_id.png and ensemble/ under user_dir.
TrainingArtifacts run_training(const std::vector<Image>& images, TrainingConfig cfg,
                               const TrainingContext& ctx,
                               const std::filesystem::path& user_dir,
                               const TrainingProgressFn& progress = {});

}  // namespace easyphoto
