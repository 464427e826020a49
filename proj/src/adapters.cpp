#include "easyphoto/adapters.hpp"

#include "easyphoto/fiducial.hpp"
#include "external_adapters.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace easyphoto {

namespace {

struct Blob {
  int cls = -1;
  double cx = 0.0;
  double cy = 0.0;
  long pixels = 0;
};

std::vector<Blob> find_keypoint_blobs(const Image& img) {
  const Eigen::Index h = img.height();
  const Eigen::Index w = img.width();
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cls(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const auto k = fiducial::classify(img(y, x, 0), img(y, x, 1), img(y, x, 2));
      cls(y, x) = k ? *k : -1;
    }
  }
  std::vector<Blob> blobs;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      if (cls(y, x) < 0) continue;
      Blob blob;
      blob.cls = cls(y, x);
      double sx = 0.0;
      double sy = 0.0;
      cls(y, x) = -1;
      stack.emplace_back(y, x);
      while (!stack.empty()) {
        const auto [py, px] = stack.back();
        stack.pop_back();
        sx += static_cast<double>(px);
        sy += static_cast<double>(py);
        ++blob.pixels;
        for (Eigen::Index dy = -1; dy <= 1; ++dy) {
          for (Eigen::Index dx = -1; dx <= 1; ++dx) {
            const Eigen::Index ny = py + dy;
            const Eigen::Index nx = px + dx;
            if (ny < 0 || nx < 0 || ny >= h || nx >= w || cls(ny, nx) != blob.cls) continue;
            cls(ny, nx) = -1;
            stack.emplace_back(ny, nx);
          }
        }
      }
      blob.cx = sx / static_cast<double>(blob.pixels);
      blob.cy = sy / static_cast<double>(blob.pixels);
      blobs.push_back(blob);
    }
  }
  return blobs;
}

}  // namespace

std::vector<FaceDetection> detect_faces(const Image& img) {
  std::vector<Blob> blobs = find_keypoint_blobs(img);
  std::vector<bool> used(blobs.size(), false);

  std::vector<size_t> eyes;
  for (size_t i = 0; i < blobs.size(); ++i) {
    if (blobs[i].cls == landmark::LeftEye) eyes.push_back(i);
  }
  std::sort(eyes.begin(), eyes.end(), [&](size_t a, size_t b) {
    return std::tie(blobs[a].cx, blobs[a].cy) < std::tie(blobs[b].cx, blobs[b].cy);
  });

  std::vector<FaceDetection> faces;
  for (const size_t eye : eyes) {
    std::array<size_t, landmark::kCanonicalCount> pick{};
    pick[landmark::LeftEye] = eye;
    bool complete = true;
    for (int k = 1; k < landmark::kCanonicalCount && complete; ++k) {
      double best = std::numeric_limits<double>::infinity();
      size_t best_i = blobs.size();
      for (size_t i = 0; i < blobs.size(); ++i) {
        if (used[i] || blobs[i].cls != k) continue;
        const double d = std::hypot(blobs[i].cx - blobs[eye].cx, blobs[i].cy - blobs[eye].cy);
        if (d < best) {
          best = d;
          best_i = i;
        }
      }
      complete = best_i < blobs.size();
      pick[static_cast<size_t>(k)] = best_i;
    }
    if (!complete) continue;
    FaceDetection det;
    det.landmarks.resize(landmark::kCanonicalCount, 2);
    for (int k = 0; k < landmark::kCanonicalCount; ++k) {
      const Blob& b = blobs[pick[static_cast<size_t>(k)]];
      used[pick[static_cast<size_t>(k)]] = true;
      det.landmarks(k, 0) = std::clamp(b.cx, 0.0, static_cast<double>(img.width() - 1));
      det.landmarks(k, 1) = std::clamp(b.cy, 0.0, static_cast<double>(img.height() - 1));
    }
    det.bbox = fiducial::bbox_from_landmarks(det.landmarks).clamped(img.height(), img.width());
    if (!det.bbox.valid()) continue;
    det.confidence = 1.0;
    faces.push_back(std::move(det));
  }
  std::stable_sort(faces.begin(), faces.end(), [](const FaceDetection& a, const FaceDetection& b) {
    return a.bbox.center_x() < b.bbox.center_x();
  });
  return faces;
}

size_t largest_face(const std::vector<FaceDetection>& faces) {
  if (faces.empty()) throw Error(Errc::NoFacesFound, "no face detected");
  size_t best = 0;
  for (size_t i = 1; i < faces.size(); ++i) {
    if (faces[i].bbox.area() > faces[best].bbox.area()) best = i;
  }
  return best;
}

FaceEmbedding embed_face(const Image& img, const BBox& bbox) {
  const BBox b = bbox.clamped(img.height(), img.width());
  if (!b.valid()) throw Error(Errc::DegenerateCrop, "embedding bbox is empty");
  const Plane gray = grayscale(crop(img, b));
  const Plane cells = resize_area(gray, kReferenceEmbeddingSide, kReferenceEmbeddingSide);
  Eigen::VectorXd v = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, 1>>(
                          cells.data(), cells.size())
                          .cast<double>();
  v.array() -= v.mean();
  const double norm = v.norm();
  if (!(norm > 1e-8)) throw Error(Errc::DegenerateCrop, "constant crop has no identity signal");
  return FaceEmbedding{v / norm};
}

double face_similarity(const FaceEmbedding& a, const FaceEmbedding& b) {
  if (a.vector.size() != b.vector.size()) {
    throw Error(Errc::DimensionMismatch, "embedding dimensions differ");
  }
  return std::clamp(a.vector.dot(b.vector), -1.0, 1.0);
}

Mask saliency_matte(const Image& img) {
  const Eigen::Index h = img.height();
  const Eigen::Index w = img.width();
  std::array<double, 3> median{};
  for (int c = 0; c < 3; ++c) {
    std::vector<float> border;
    border.reserve(static_cast<size_t>(2 * (h + w)));
    for (Eigen::Index y = 0; y < h; ++y) {
      for (Eigen::Index x = 0; x < w; ++x) {
        if (y == 0 || x == 0 || y == h - 1 || x == w - 1) border.push_back(img(y, x, c));
      }
    }
    std::sort(border.begin(), border.end());
    const size_t n = border.size();
    median[static_cast<size_t>(c)] =
        n % 2 ? border[n / 2] : 0.5 * (static_cast<double>(border[n / 2 - 1]) + border[n / 2]);
  }
  Mask mask(h, w);
  const double norm = std::sqrt(3.0);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = img(y, x, c) - median[static_cast<size_t>(c)];
        d2 += d * d;
      }
      mask(y, x) = std::sqrt(d2) / norm > 0.3 ? 1.0f : 0.0f;
    }
  }
  return mask;
}

Image retouch_skin(const Image& img) {
  const Mask m = saliency_matte(img);
  const Image blurred = box_blur(img, 1);
  Image out;
  for (int c = 0; c < 3; ++c) {
    out.channels[c] = img.channels[c] + 0.3f * m * (blurred.channels[c] - img.channels[c]);
  }
  return clamp01(std::move(out));
}

Image enhance_portrait(const Image& img) {
  const Image blurred = box_blur(img, 1);
  Image out;
  for (int c = 0; c < 3; ++c) {
    out.channels[c] = img.channels[c] + 0.2f * (img.channels[c] - blurred.channels[c]);
  }
  return clamp01(std::move(out));
}

Image fuse_faces(const Image& template_img, const Image& donor, const LandmarkSet& donor_landmarks,
                 const LandmarkSet& template_landmarks) {
  if (donor_landmarks.rows() != template_landmarks.rows()) {
    throw Error(Errc::LengthMismatch, "fuse landmark sets differ in length");
  }
  const Mask hull = hull_mask(template_landmarks, template_img.height(), template_img.width());
  const AffineMatrix m = estimate_alignment(donor_landmarks, template_landmarks);
  const Image warped = warp_image(donor, m, template_img.height(), template_img.width());
  return feathered_blend(template_img, warped, hull, 4);
}

// ---------------------------------------------------------------------------

namespace {

struct ReferenceDetector final : FaceDetector {
  std::vector<FaceDetection> detect(const Image& img) const override { return detect_faces(img); }
  std::string id() const override { return "reference"; }
};

struct ReferenceEmbedder final : FaceEmbedder {
  FaceEmbedding embed(const Image& img, const BBox& bbox) const override {
    return embed_face(img, bbox);
  }
  std::string id() const override { return "reference"; }
};

struct ReferenceMatter final : SaliencyMatter {
  Mask matte(const Image& img) const override { return saliency_matte(img); }
  std::string id() const override { return "reference"; }
};

struct ReferenceRetoucher final : SkinRetoucher {
  Image retouch(const Image& img) const override { return retouch_skin(img); }
  std::string id() const override { return "reference"; }
};

struct ReferenceEnhancer final : PortraitEnhancer {
  Image enhance(const Image& img) const override { return enhance_portrait(img); }
  std::string id() const override { return "reference"; }
};

struct ReferenceFuser final : FaceFuser {
  Image fuse(const Image& t, const Image& d, const LandmarkSet& dl,
             const LandmarkSet& tl) const override {
    return fuse_faces(t, d, dl, tl);
  }
  std::string id() const override { return "reference"; }
};

}  // namespace

AdapterRegistry AdapterRegistry::reference() {
  AdapterRegistry r;
  r.detector = std::make_shared<ReferenceDetector>();
  r.embedder = std::make_shared<ReferenceEmbedder>();
  r.matting = std::make_shared<ReferenceMatter>();
  r.retouch = std::make_shared<ReferenceRetoucher>();
  r.enhance = std::make_shared<ReferenceEnhancer>();
  r.fuser = std::make_shared<ReferenceFuser>();
  return r;
}

AdapterRegistry AdapterRegistry::from_config(const std::map<std::string, std::string>& config) {
  AdapterRegistry r = reference();
  auto binding = [&](const std::string& name) -> std::string {
    const auto it = config.find("adapter." + name);
    if (it == config.end() || it->second.empty() || it->second == "reference") return {};
    std::string url = it->second;
    if (url.rfind("external:", 0) == 0) url = url.substr(9);
    if (url.rfind("http://", 0) != 0 && url.rfind("https://", 0) != 0) {
      throw Error(Errc::InvalidArgument, "adapter." + name + ": unsupported binding '" +
                                             it->second + "'");
    }
    return url;
  };
  if (auto url = binding("detector"); !url.empty()) r.detector = make_external_detector(url);
  if (auto url = binding("embedder"); !url.empty()) r.embedder = make_external_embedder(url);
  if (auto url = binding("matting"); !url.empty()) r.matting = make_external_matter(url);
  if (auto url = binding("retouch"); !url.empty()) r.retouch = make_external_retoucher(url);
  if (auto url = binding("enhance"); !url.empty()) r.enhance = make_external_enhancer(url);
  if (auto url = binding("fuser"); !url.empty()) r.fuser = make_external_fuser(url);
  return r;
}

std::map<std::string, std::string> AdapterRegistry::ids() const {
  return {{"detector", detector->id()}, {"embedder", embedder->id()},
          {"matting", matting->id()},   {"retouch", retouch->id()},
          {"enhance", enhance->id()},   {"fuser", fuser->id()}};
}

}  // namespace easyphoto
