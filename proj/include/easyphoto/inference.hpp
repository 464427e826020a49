#pragma once

#include "easyphoto/adapters.hpp"
#include "easyphoto/diffusion.hpp"
#include "easyphoto/training.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace easyphoto {

struct ControlWeights {
  double canny = 1.0;
  double color = 0.85;
  double openpose = 1.0;
  double tile = 1.0;
};

struct GenerationOptions {
  std::uint64_t seed = 0;
  bool mouth_refine = true;
  double ear_expand_ratio = kDefaultEarExpandRatio;
  StageParams first = kFirstStageDefaults;
  StageParams second = kSecondStageDefaults;
  ControlWeights weights;
  int ring_outer = 8;
  int ring_inner = 4;
  /// Seed offset of the final boundary inpaint in group generation.
  std::uint64_t merge_seed_offset = 1000;
  std::string style = "realistic";
  std::string prompt{kFixedPrompt};
  std::string negative_prompt;

  /// Throws InvalidArgument when a parameter is out of range.
  void check() const;
};

/// Flat JSON view of the options; options_from_json overlays the keys present on `base`.
std::string options_to_json(const GenerationOptions& opts);
GenerationOptions options_from_json(std::string_view text, GenerationOptions base = {});

struct PreparedInputs {
  Image replaced;
  Image fused;
  Mask inpaint_mask;
  LandmarkSet template_landmarks;
  BBox template_bbox;
  LandmarkSet roop_landmarks;
  AffineMatrix M;
};

/// Everything generation needs from one trained user.
struct UserBundle {
  std::string user_id;
  std::shared_ptr<const MergedLora> lora;
  Image face_id;
  Image roop;
};

struct InferenceContext {
  AdapterRegistry adapters = AdapterRegistry::reference();
  std::shared_ptr<const DiffusionBackend> backend = std::make_shared<MockBackend>();
};

struct DiffusionCall {
  std::string stage;
  std::uint64_t seed = 0;
  double denoise_strength = 0.0;
  int steps = 0;
  std::vector<std::pair<ControlKind, double>> controls;
};

struct Provenance {
  std::string template_ref;
  std::vector<std::string> user_ids;
  std::uint64_t seed = 0;
  std::string style;
  std::string backend_id;
  std::map<std::string, std::string> adapter_ids;
  std::vector<DiffusionCall> calls;
  std::map<std::string, double> timings_ms;
};

std::string provenance_json(const Provenance& p);

/// Template (largest face), face_id and roop (exactly one face each) -> alignment,
/// paste, fuse and the calibrated inpaint mask. Throws NoFacesFound / AmbiguousFace
/// naming the offending input.
PreparedInputs prepare_inputs(const Image& template_img, const Image& face_id, const Image& roop,
                              const GenerationOptions& opts, const AdapterRegistry& adapters);

/// Inpaints the fused image under canny + color (fused) and openpose (template
/// landmarks) guidance.
Image first_diffusion(const PreparedInputs& prep, std::shared_ptr<const MergedLora> lora,
                      const GenerationOptions& opts, const DiffusionBackend& backend,
                      Provenance* provenance = nullptr);

/// Boundary ring of the inpaint mask, plus the mouth region when mouth_refine is set.
Mask second_stage_mask(const PreparedInputs& prep, const GenerationOptions& opts);

/// Re-fuses the roop face into the first output and inpaints the seam/mouth mask under
/// canny + tile guidance with seed + 1.
Image second_diffusion(const Image& first_out, const PreparedInputs& prep, const Image& roop,
                       std::shared_ptr<const MergedLora> lora, const GenerationOptions& opts,
                       const InferenceContext& ctx, Provenance* provenance = nullptr);

/// Bilinear resize to the template size, then skin retouch, then enhancement.
Image post_process(const Image& img, Eigen::Index template_h, Eigen::Index template_w,
                   const AdapterRegistry& adapters);

enum class GenerationStage { Preparing, FirstDiffusion, SecondDiffusion, Merging, PostProcess };

/// Notified on entry to each stage. Group generation repeats the per-face stages.
using StageFn = std::function<void(GenerationStage)>;

struct PortraitResult {
  Image image;
  /// The image before post_process.
  Image raw;
  Provenance provenance;
};

PortraitResult generate_portrait(const Image& template_img, const UserBundle& user,
                                 const GenerationOptions& opts, const InferenceContext& ctx,
                                 const StageFn& on_stage = {});

struct FaceSplit {
  FaceDetection face;
  Image sub_image;
  Mask mask;
};

/// One entry per face, left to right. Each sub-image has every other face's
/// calibrated mask region painted white.
std::vector<FaceSplit> split_masks_multi(const Image& template_img, const GenerationOptions& opts,
                                         const AdapterRegistry& adapters);

/// Users are assigned to faces left to right. Face i runs the single-identity pipeline
/// (without post_process) on its sub-image with seed + 2i; the results are composited
/// through their masks and the seams repainted once under canny guidance.
/// Throws UserCountMismatch.
PortraitResult generate_group(const Image& template_img, const std::vector<UserBundle>& users,
                              const GenerationOptions& opts, const InferenceContext& ctx,
                              const StageFn& on_stage = {});

/// Single-identity pipeline for one face, group pipeline otherwise. The user count must
/// equal the number of faces detected in the template (UserCountMismatch).
PortraitResult generate(const Image& template_img, const std::vector<UserBundle>& users,
                        const GenerationOptions& opts, const InferenceContext& ctx,
                        const StageFn& on_stage = {});

/// Union of the boundary rings of every split mask, as repainted by generate_group.
Mask group_seam_mask(const std::vector<FaceSplit>& splits, const GenerationOptions& opts);

}  // namespace easyphoto
