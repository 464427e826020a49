#pragma once

#include "easyphoto/geometry.hpp"
#include "easyphoto/lora.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace easyphoto {

enum class ControlKind { Canny, Color, OpenPose, Tile };

const char* to_string(ControlKind kind) noexcept;
ControlKind control_kind_from_string(const std::string& name);

/// One guidance channel of a diffusion call.
struct ControlUnit {
  ControlKind kind = ControlKind::Canny;
  Image reference;
  double weight = 1.0;
};

struct InpaintRequest {
  Image image;
  Mask mask;
  std::string prompt;
  std::string negative_prompt;
  std::vector<ControlUnit> controls;
  std::shared_ptr<const MergedLora> lora;
  double denoise_strength = 1.0;
  std::uint64_t seed = 0;
  int steps = 20;
  std::string style = "realistic";
};

/// Throws InvalidRequest describing the first violated precondition.
void validate(const InpaintRequest& req);

// ---------------------------------------------------------------------------
// Control-reference builders. Deterministic and dimension-preserving.
// ---------------------------------------------------------------------------

inline constexpr double kDefaultCannyThreshold = 0.2;
inline constexpr int kDefaultColorGrid = 8;
inline constexpr int kOpenPoseRadius = 4;

/// Sobel magnitude of the luma (replicated border), normalized by its maximum and
/// thresholded; the binary edge map is replicated to 3 channels.
Image canny_reference(const Image& img, double threshold = kDefaultCannyThreshold);

/// Block average over a grid x grid partition, broadcast back to every pixel of its cell.
Image color_reference(const Image& img, int grid = kDefaultColorGrid);

/// Black canvas with a filled radius-4 disc per landmark in the keypoint palette.
Image openpose_reference(const LandmarkSet& landmarks, Eigen::Index height, Eigen::Index width);

/// 2x area downscale (ceil) followed by a bilinear upscale back to the input size.
Image tile_reference(const Image& img);

// ---------------------------------------------------------------------------
// Backends.
// ---------------------------------------------------------------------------

/// Contract for every backend: pixels with mask < 0.5 come back within 1/255,
/// identical requests give identical images, and output stays in [0,1].
class DiffusionBackend {
 public:
  virtual ~DiffusionBackend() = default;
  virtual Image inpaint(const InpaintRequest& req) const = 0;
  virtual std::string id() const = 0;
  /// 0 means unlimited.
  virtual int max_concurrency() const { return 0; }
};

inline constexpr double kMockNoiseAmplitude = 0.05;
inline constexpr double kMockLoraGain = 0.01;

/// Noise value in [-1, 1) at (x, y, channel) for a seed.
double mock_noise(std::uint64_t seed, std::uint64_t x, std::uint64_t y, std::uint64_t channel);

/// Deterministic reference backend; see MockBackend.
Image mock_inpaint(const InpaintRequest& req);

/// Inside the mask: clamp((1-s) in + s (base + 0.05 n), 0, 1) with base the weighted
/// mean of the control references (0.5 without controls) plus 0.01 tanh(mean LoRA value).
class MockBackend final : public DiffusionBackend {
 public:
  Image inpaint(const InpaintRequest& req) const override { return mock_inpaint(req); }
  std::string id() const override { return "mock"; }
};

/// Wire format of the external backend: one JSON document per line with images as
/// base64 PNG and LoRA tensors as base64 little-endian binary32.
std::string encode_inpaint_request(const InpaintRequest& req);
InpaintRequest decode_inpaint_request(std::string_view line);
std::string encode_inpaint_reply(const Image& img);
Image decode_inpaint_reply(std::string_view body);

/// Line-delimited JSON over HTTP: POSTs one request document to <url>/inpaint and
/// expects {"v":1,"image":<base64 PNG>} back.
std::shared_ptr<const DiffusionBackend> make_external_backend(const std::string& url);

/// "mock" or "external:<url>". Throws InvalidArgument for anything else.
std::shared_ptr<const DiffusionBackend> make_backend(const std::string& spec);

}  // namespace easyphoto
