#pragma once

#include "easyphoto/geometry.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace easyphoto {

struct FaceDetection {
  BBox bbox;
  double confidence = 0.0;
  LandmarkSet landmarks;
};

/// Unit-norm identity embedding.
struct FaceEmbedding {
  Eigen::VectorXd vector;
};

inline constexpr int kReferenceEmbeddingSide = 8;
inline constexpr int kReferenceEmbeddingDim = kReferenceEmbeddingSide * kReferenceEmbeddingSide;

// ---------------------------------------------------------------------------
// Reference implementations. Pure and deterministic.
// ---------------------------------------------------------------------------

/// Fiducial-face detector; detections sorted by bbox center x ascending.
std::vector<FaceDetection> detect_faces(const Image& img);

/// Crop -> grayscale -> 8x8 area average -> zero mean -> unit L2 norm.
/// Throws DegenerateCrop for constant crops.
FaceEmbedding embed_face(const Image& img, const BBox& bbox);

/// Cosine similarity of two unit embeddings. Throws DimensionMismatch.
double face_similarity(const FaceEmbedding& a, const FaceEmbedding& b);

/// Binary foreground mask: color distance from the border median above 0.3.
Mask saliency_matte(const Image& img);

/// 3x3 box blur blended at 0.3 inside the saliency mask.
Image retouch_skin(const Image& img);

/// Unsharp mask with amount 0.2 over a 3x3 box blur.
Image enhance_portrait(const Image& img);

/// Aligns the donor onto the template landmarks and blends it in through the template's
/// landmark hull, feathered by 4 px.
Image fuse_faces(const Image& template_img, const Image& donor, const LandmarkSet& donor_landmarks,
                 const LandmarkSet& template_landmarks);

/// Index of the detection with the largest bbox area (first on ties).
size_t largest_face(const std::vector<FaceDetection>& faces);

// ---------------------------------------------------------------------------
// Pluggable interfaces.
// ---------------------------------------------------------------------------

class FaceDetector {
 public:
  virtual ~FaceDetector() = default;
  virtual std::vector<FaceDetection> detect(const Image& img) const = 0;
  virtual std::string id() const = 0;
};

class FaceEmbedder {
 public:
  virtual ~FaceEmbedder() = default;
  virtual FaceEmbedding embed(const Image& img, const BBox& bbox) const = 0;
  virtual std::string id() const = 0;
};

class SaliencyMatter {
 public:
  virtual ~SaliencyMatter() = default;
  virtual Mask matte(const Image& img) const = 0;
  virtual std::string id() const = 0;
};

class SkinRetoucher {
 public:
  virtual ~SkinRetoucher() = default;
  virtual Image retouch(const Image& img) const = 0;
  virtual std::string id() const = 0;
};

class PortraitEnhancer {
 public:
  virtual ~PortraitEnhancer() = default;
  virtual Image enhance(const Image& img) const = 0;
  virtual std::string id() const = 0;
};

class FaceFuser {
 public:
  virtual ~FaceFuser() = default;
  virtual Image fuse(const Image& template_img, const Image& donor,
                     const LandmarkSet& donor_landmarks,
                     const LandmarkSet& template_landmarks) const = 0;
  virtual std::string id() const = 0;
};

/// One binding per interface. Missing config keys bind the reference implementation.
struct AdapterRegistry {
  std::shared_ptr<const FaceDetector> detector;
  std::shared_ptr<const FaceEmbedder> embedder;
  std::shared_ptr<const SaliencyMatter> matting;
  std::shared_ptr<const SkinRetoucher> retouch;
  std::shared_ptr<const PortraitEnhancer> enhance;
  std::shared_ptr<const FaceFuser> fuser;

  static AdapterRegistry reference();

  /// Reads adapter.detector, adapter.embedder, adapter.matting, adapter.retouch,
  /// adapter.enhance, adapter.fuser. Values: "reference" or an http(s) base URL
  /// (optionally prefixed with "external:").
  static AdapterRegistry from_config(const std::map<std::string, std::string>& config);

  /// interface name -> implementation id
  std::map<std::string, std::string> ids() const;
};

}  // namespace easyphoto
