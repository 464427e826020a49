#pragma once

// Internal helpers shared by the external (HTTP) adapters and the external diffusion backend.

#include "easyphoto/geometry.hpp"

#include <json.hpp>

#include <memory>
#include <mutex>
#include <string>
#include <string_view>

namespace httplib {
class Client;
}

namespace easyphoto::detail {

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

std::string image_to_base64(const Image& img);
Image image_from_base64(std::string_view text);
std::string mask_to_base64(const Mask& mask);
Mask mask_from_base64(std::string_view text);

nlohmann::json landmarks_to_json(const LandmarkSet& lm);
LandmarkSet landmarks_from_json(const nlohmann::json& j);

/// Serialized JSON POST client. One request in flight at a time.
class JsonHttpClient {
 public:
  explicit JsonHttpClient(const std::string& base_url);
  ~JsonHttpClient();

  /// Posts body as a single JSON line; failures throw `failure_code`.
  nlohmann::json post(const std::string& path, const nlohmann::json& body, Errc failure_code);
  std::string post_text(const std::string& path, const std::string& body, Errc failure_code);

  const std::string& base_url() const { return base_url_; }

 private:
  std::string base_url_;
  std::string prefix_;
  std::unique_ptr<httplib::Client> client_;
  std::mutex mutex_;
};

}  // namespace easyphoto::detail
