#include "easyphoto/diffusion.hpp"

#include "easyphoto/fiducial.hpp"
#include "easyphoto/random.hpp"
#include "http_json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace easyphoto {

const char* to_string(ControlKind kind) noexcept {
  switch (kind) {
    case ControlKind::Canny: return "canny";
    case ControlKind::Color: return "color";
    case ControlKind::OpenPose: return "openpose";
    case ControlKind::Tile: return "tile";
  }
  return "unknown";
}

ControlKind control_kind_from_string(const std::string& name) {
  if (name == "canny") return ControlKind::Canny;
  if (name == "color") return ControlKind::Color;
  if (name == "openpose") return ControlKind::OpenPose;
  if (name == "tile") return ControlKind::Tile;
  throw Error(Errc::InvalidRequest, "unknown control kind '" + name + "'");
}

void validate(const InpaintRequest& req) {
  if (req.image.empty()) throw Error(Errc::InvalidRequest, "empty image");
  if (!same_size(req.image, req.mask)) throw Error(Errc::InvalidRequest, "mask size differs from image");
  if (!in_unit_range(req.image)) throw Error(Errc::InvalidRequest, "image values outside [0,1]");
  if (!req.mask.allFinite() || (req.mask < 0.0f).any() || (req.mask > 1.0f).any()) {
    throw Error(Errc::InvalidRequest, "mask values outside [0,1]");
  }
  if (!(req.denoise_strength > 0.0 && req.denoise_strength <= 1.0)) {
    throw Error(Errc::InvalidRequest, "denoise_strength outside (0,1]");
  }
  if (req.steps < 1) throw Error(Errc::InvalidRequest, "steps must be positive");
  for (const auto& unit : req.controls) {
    if (!(unit.weight >= 0.0 && unit.weight <= 2.0)) {
      throw Error(Errc::InvalidRequest, std::string(to_string(unit.kind)) + " weight outside [0,2]");
    }
    if (!unit.reference.same_size(req.image)) {
      throw Error(Errc::InvalidRequest, std::string(to_string(unit.kind)) + " reference size differs");
    }
  }
}

Image canny_reference(const Image& img, double threshold) {
  const Eigen::Index h = img.height();
  const Eigen::Index w = img.width();
  Eigen::ArrayXXd gray(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      gray(y, x) = 0.299 * img(y, x, 0) + 0.587 * img(y, x, 1) + 0.114 * img(y, x, 2);
    }
  }
  auto at = [&](Eigen::Index y, Eigen::Index x) {
    return gray(std::clamp<Eigen::Index>(y, 0, h - 1), std::clamp<Eigen::Index>(x, 0, w - 1));
  };
  Eigen::ArrayXXd mag(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const double gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
      mag(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  }
  const double peak = std::max(mag.maxCoeff(), 1e-9);
  const Plane edges = ((mag / peak) >= threshold).cast<float>();
  return Image::from_gray(edges);
}

Image color_reference(const Image& img, int grid) {
  if (grid < 1) throw Error(Errc::InvalidArgument, "color grid must be >= 1");
  const Eigen::Index h = img.height();
  const Eigen::Index w = img.width();
  const Eigen::Index rows = std::min<Eigen::Index>(grid, h);
  const Eigen::Index cols = std::min<Eigen::Index>(grid, w);
  Image out(h, w);
  for (Eigen::Index gy = 0; gy < rows; ++gy) {
    const Eigen::Index y0 = gy * h / rows;
    const Eigen::Index y1 = (gy + 1) * h / rows;
    for (Eigen::Index gx = 0; gx < cols; ++gx) {
      const Eigen::Index x0 = gx * w / cols;
      const Eigen::Index x1 = (gx + 1) * w / cols;
      for (int c = 0; c < 3; ++c) {
        auto cell = img.channels[c].block(y0, x0, y1 - y0, x1 - x0);
        const double mean = cell.cast<double>().mean();
        out.channels[c].block(y0, x0, y1 - y0, x1 - x0).setConstant(static_cast<float>(mean));
      }
    }
  }
  return out;
}

Image openpose_reference(const LandmarkSet& landmarks, Eigen::Index height, Eigen::Index width) {
  Image out(height, width, 0.0f);
  const int r = kOpenPoseRadius;
  for (Eigen::Index i = 0; i < landmarks.rows(); ++i) {
    const auto& color = fiducial::kKeypointColors[static_cast<size_t>(i) % fiducial::kKeypointColors.size()];
    const double cx = landmarks(i, 0);
    const double cy = landmarks(i, 1);
    const auto y_lo = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor(cy - r)));
    const auto y_hi = std::min<Eigen::Index>(height - 1, static_cast<Eigen::Index>(std::ceil(cy + r)));
    const auto x_lo = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor(cx - r)));
    const auto x_hi = std::min<Eigen::Index>(width - 1, static_cast<Eigen::Index>(std::ceil(cx + r)));
    for (Eigen::Index y = y_lo; y <= y_hi; ++y) {
      for (Eigen::Index x = x_lo; x <= x_hi; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        if (dx * dx + dy * dy <= static_cast<double>(r * r)) {
          for (int c = 0; c < 3; ++c) out(y, x, c) = color[static_cast<size_t>(c)];
        }
      }
    }
  }
  return out;
}

Image tile_reference(const Image& img) {
  Image out;
  for (int c = 0; c < 3; ++c) {
    out.channels[c] =
        resize_bilinear(downscale2_area(img.channels[c]), img.height(), img.width());
  }
  return out;
}

double mock_noise(std::uint64_t seed, std::uint64_t x, std::uint64_t y, std::uint64_t channel) {
  const std::uint64_t h =
      splitmix64(seed ^ (x * 73856093ULL) ^ (y * 19349663ULL) ^ (channel * 83492791ULL));
  return unit2_from_bits(h) - 1.0;
}

Image mock_inpaint(const InpaintRequest& req) {
  validate(req);
  const double s = req.denoise_strength;
  double weight_sum = 0.0;
  for (const auto& unit : req.controls) weight_sum += unit.weight;
  const double lora_shift = req.lora ? kMockLoraGain * std::tanh(req.lora->mean_value()) : 0.0;

  Image out = req.image;
  for (Eigen::Index y = 0; y < out.height(); ++y) {
    for (Eigen::Index x = 0; x < out.width(); ++x) {
      if (!(req.mask(y, x) >= 0.5f)) continue;
      for (int c = 0; c < 3; ++c) {
        double base = 0.5;
        if (weight_sum > 0.0) {
          double acc = 0.0;
          for (const auto& unit : req.controls) acc += unit.weight * unit.reference(y, x, c);
          base = acc / weight_sum;
        }
        base += lora_shift;
        const double n = mock_noise(req.seed, static_cast<std::uint64_t>(x),
                                    static_cast<std::uint64_t>(y), static_cast<std::uint64_t>(c));
        const double v = (1.0 - s) * req.image(y, x, c) + s * (base + kMockNoiseAmplitude * n);
        out(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

namespace {

using nlohmann::json;

std::string f32le_base64(const Eigen::ArrayXf& values) {
  std::string bytes(static_cast<size_t>(values.size()) * 4, '\0');
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) {
      bytes[static_cast<size_t>(4 * i + b)] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
  }
  return detail::base64_encode(bytes);
}

Eigen::ArrayXf f32le_from_base64(const std::string& text) {
  const std::string bytes = detail::base64_decode(text);
  if (bytes.size() % 4 != 0) throw Error(Errc::InvalidRequest, "tensor payload not a multiple of 4");
  Eigen::ArrayXf values(static_cast<Eigen::Index>(bytes.size() / 4));
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[static_cast<size_t>(4 * i + b)])) << (8 * b);
    }
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

}  // namespace

std::string encode_inpaint_request(const InpaintRequest& req) {
  json controls = json::array();
  for (const auto& unit : req.controls) {
    controls.push_back({{"kind", to_string(unit.kind)},
                        {"weight", unit.weight},
                        {"reference", detail::image_to_base64(unit.reference)}});
  }
  json body = {{"v", 1},
               {"image", detail::image_to_base64(req.image)},
               {"mask", detail::mask_to_base64(req.mask)},
               {"prompt", req.prompt},
               {"negative_prompt", req.negative_prompt},
               {"controls", controls},
               {"denoise_strength", req.denoise_strength},
               {"seed", req.seed},
               {"steps", req.steps},
               {"style", req.style}};
  if (req.lora) {
    json prov = json::array();
    for (const auto& [id, w] : req.lora->provenance) prov.push_back({{"checkpoint_id", id}, {"weight", w}});
    json tensors = json::object();
    for (const auto& [key, t] : req.lora->tensors) {
      tensors[key] = {{"shape", t.shape}, {"f32le", f32le_base64(t.values)}};
    }
    body["lora"] = {{"provenance", prov}, {"tensors", tensors}};
  }
  return body.dump() + "\n";
}

InpaintRequest decode_inpaint_request(std::string_view line) {
  try {
    const json j = json::parse(line);
    if (j.value("v", 0) != 1) throw Error(Errc::InvalidRequest, "unsupported schema version");
    InpaintRequest req;
    req.image = detail::image_from_base64(j.at("image").get<std::string>());
    req.mask = detail::mask_from_base64(j.at("mask").get<std::string>());
    req.prompt = j.value("prompt", "");
    req.negative_prompt = j.value("negative_prompt", "");
    for (const auto& c : j.at("controls")) {
      req.controls.push_back(ControlUnit{control_kind_from_string(c.at("kind").get<std::string>()),
                                         detail::image_from_base64(c.at("reference").get<std::string>()),
                                         c.at("weight").get<double>()});
    }
    req.denoise_strength = j.at("denoise_strength").get<double>();
    req.seed = j.at("seed").get<std::uint64_t>();
    req.steps = j.at("steps").get<int>();
    req.style = j.value("style", "realistic");
    if (j.contains("lora")) {
      auto lora = std::make_shared<MergedLora>();
      for (const auto& p : j["lora"].at("provenance")) {
        lora->provenance.emplace_back(p.at("checkpoint_id").get<std::string>(), p.at("weight").get<double>());
      }
      for (const auto& [key, t] : j["lora"].at("tensors").items()) {
        Tensor tensor{t.at("shape").get<std::vector<std::int64_t>>(),
                      f32le_from_base64(t.at("f32le").get<std::string>())};
        if (tensor.element_count() != tensor.values.size()) {
          throw Error(Errc::InvalidRequest, key + ": tensor size does not match shape");
        }
        lora->tensors.emplace(key, std::move(tensor));
      }
      req.lora = std::move(lora);
    }
    return req;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidRequest, std::string("malformed inpaint request: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::UndecodableImage) throw Error(Errc::InvalidRequest, e.what());
    throw;
  }
}

std::string encode_inpaint_reply(const Image& img) {
  return json{{"v", 1}, {"image", detail::image_to_base64(img)}}.dump() + "\n";
}

Image decode_inpaint_reply(std::string_view body) {
  try {
    const json j = json::parse(body);
    return detail::image_from_base64(j.at("image").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(Errc::BackendUnavailable, std::string("malformed backend reply: ") + e.what());
  } catch (const Error& e) {
    throw Error(Errc::BackendUnavailable, e.what());
  }
}

namespace {

class ExternalBackend final : public DiffusionBackend {
 public:
  explicit ExternalBackend(const std::string& url)
      : client_(std::make_unique<detail::JsonHttpClient>(url)) {}

  Image inpaint(const InpaintRequest& req) const override {
    validate(req);
    const std::string reply =
        client_->post_text("/inpaint", encode_inpaint_request(req), Errc::BackendUnavailable);
    Image out = decode_inpaint_reply(reply);
    if (!out.same_size(req.image)) throw Error(Errc::BackendUnavailable, "backend changed image size");
    return out;
  }

  std::string id() const override { return "external:" + client_->base_url(); }
  int max_concurrency() const override { return 1; }

 private:
  std::unique_ptr<detail::JsonHttpClient> client_;
};

}  // namespace

std::shared_ptr<const DiffusionBackend> make_external_backend(const std::string& url) {
  return std::make_shared<ExternalBackend>(url);
}

std::shared_ptr<const DiffusionBackend> make_backend(const std::string& spec) {
  if (spec == "mock") return std::make_shared<MockBackend>();
  if (spec.rfind("external:", 0) == 0 && spec.size() > 9) return make_external_backend(spec.substr(9));
  throw Error(Errc::InvalidArgument, "unknown backend '" + spec + "'");
}

}  // namespace easyphoto
