#include "external_adapters.hpp"

#include "http_json.hpp"

#include <cmath>

namespace easyphoto {

namespace {

using nlohmann::json;

class ExternalBase {
 public:
  explicit ExternalBase(const std::string& url) : client_(std::make_unique<detail::JsonHttpClient>(url)) {}

 protected:
  json call(const std::string& verb, json body) const {
    body["v"] = 1;
    try {
      return client_->post("/" + verb, body, Errc::AdapterFailure);
    } catch (const json::exception& e) {
      throw Error(Errc::AdapterFailure, verb + ": " + e.what());
    }
  }
  std::string external_id() const { return "external:" + client_->base_url(); }

  Image checked_image(const json& reply, const Image& like) const {
    Image out = detail::image_from_base64(reply.at("image").get<std::string>());
    if (!out.same_size(like)) throw Error(Errc::AdapterFailure, "adapter changed image dimensions");
    return out;
  }

 private:
  // The HTTP client serializes its own calls, so shared use from const methods is safe.
  std::unique_ptr<detail::JsonHttpClient> client_;
};

class ExternalDetector final : public FaceDetector, ExternalBase {
 public:
  using ExternalBase::ExternalBase;
  std::vector<FaceDetection> detect(const Image& img) const override {
    const json reply = call("detect", {{"image", detail::image_to_base64(img)}});
    std::vector<FaceDetection> faces;
    try {
      for (const auto& f : reply.at("faces")) {
        FaceDetection d;
        const auto& b = f.at("bbox");
        d.bbox = BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()}
                     .clamped(img.height(), img.width());
        d.confidence = std::clamp(f.value("confidence", 1.0), 0.0, 1.0);
        d.landmarks = detail::landmarks_from_json(f.at("landmarks"));
        faces.push_back(std::move(d));
      }
    } catch (const json::exception& e) {
      throw Error(Errc::AdapterFailure, std::string("detect: ") + e.what());
    }
    std::stable_sort(faces.begin(), faces.end(), [](const auto& a, const auto& b) {
      return a.bbox.center_x() < b.bbox.center_x();
    });
    return faces;
  }
  std::string id() const override { return external_id(); }
};

class ExternalEmbedder final : public FaceEmbedder, ExternalBase {
 public:
  using ExternalBase::ExternalBase;
  FaceEmbedding embed(const Image& img, const BBox& bbox) const override {
    const json reply = call("embed", {{"image", detail::image_to_base64(img)},
                                      {"bbox", {bbox.x0, bbox.y0, bbox.x1, bbox.y1}}});
    if (reply.contains("error")) throw Error(Errc::DegenerateCrop, reply["error"].dump());
    const auto values = reply.at("vector").get<std::vector<double>>();
    FaceEmbedding e{Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                      static_cast<Eigen::Index>(values.size()))};
    if (std::abs(e.vector.norm() - 1.0) > 1e-6) {
      throw Error(Errc::AdapterFailure, "embedder returned a non-unit vector");
    }
    return e;
  }
  std::string id() const override { return external_id(); }
};

class ExternalMatter final : public SaliencyMatter, ExternalBase {
 public:
  using ExternalBase::ExternalBase;
  Mask matte(const Image& img) const override {
    const json reply = call("matte", {{"image", detail::image_to_base64(img)}});
    Mask m = detail::mask_from_base64(reply.at("mask").get<std::string>());
    if (!same_size(img, m)) throw Error(Errc::AdapterFailure, "matte size mismatch");
    return m;
  }
  std::string id() const override { return external_id(); }
};

class ExternalRetoucher final : public SkinRetoucher, ExternalBase {
 public:
  using ExternalBase::ExternalBase;
  Image retouch(const Image& img) const override {
    return checked_image(call("retouch", {{"image", detail::image_to_base64(img)}}), img);
  }
  std::string id() const override { return external_id(); }
};

class ExternalEnhancer final : public PortraitEnhancer, ExternalBase {
 public:
  using ExternalBase::ExternalBase;
  Image enhance(const Image& img) const override {
    return checked_image(call("enhance", {{"image", detail::image_to_base64(img)}}), img);
  }
  std::string id() const override { return external_id(); }
};

class ExternalFuser final : public FaceFuser, ExternalBase {
 public:
  using ExternalBase::ExternalBase;
  Image fuse(const Image& t, const Image& d, const LandmarkSet& dl,
             const LandmarkSet& tl) const override {
    if (dl.rows() != tl.rows()) throw Error(Errc::LengthMismatch, "fuse landmark sets differ");
    const json body = {{"template", detail::image_to_base64(t)},
                       {"donor", detail::image_to_base64(d)},
                       {"donor_landmarks", detail::landmarks_to_json(dl)},
                       {"template_landmarks", detail::landmarks_to_json(tl)}};
    return checked_image(call("fuse", body), t);
  }
  std::string id() const override { return external_id(); }
};

}  // namespace

std::shared_ptr<const FaceDetector> make_external_detector(const std::string& url) {
  return std::make_shared<ExternalDetector>(url);
}
std::shared_ptr<const FaceEmbedder> make_external_embedder(const std::string& url) {
  return std::make_shared<ExternalEmbedder>(url);
}
std::shared_ptr<const SaliencyMatter> make_external_matter(const std::string& url) {
  return std::make_shared<ExternalMatter>(url);
}
std::shared_ptr<const SkinRetoucher> make_external_retoucher(const std::string& url) {
  return std::make_shared<ExternalRetoucher>(url);
}
std::shared_ptr<const PortraitEnhancer> make_external_enhancer(const std::string& url) {
  return std::make_shared<ExternalEnhancer>(url);
}
std::shared_ptr<const FaceFuser> make_external_fuser(const std::string& url) {
  return std::make_shared<ExternalFuser>(url);
}

}  // namespace easyphoto
