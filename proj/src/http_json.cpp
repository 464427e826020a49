#include "http_json.hpp"

#include "easyphoto/image_io.hpp"

#include <httplib.h>
#include <openssl/evp.h>

namespace easyphoto::detail {

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(Errc::InvalidRequest, "base64 length not a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(Errc::InvalidRequest, "invalid base64");
  size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<size_t>(n) - padding);
  return out;
}

std::string image_to_base64(const Image& img) {
  const auto png = encode_png(img);
  return base64_encode(std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
}

Image image_from_base64(std::string_view text) { return decode_image(base64_decode(text)); }

std::string mask_to_base64(const Mask& mask) {
  const auto png = encode_png(mask);
  return base64_encode(std::string_view(reinterpret_cast<const char*>(png.data()), png.size()));
}

Mask mask_from_base64(std::string_view text) {
  // Gray PNGs decode to three equal channels.
  return decode_image(base64_decode(text)).channels[0];
}

nlohmann::json landmarks_to_json(const LandmarkSet& lm) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < lm.rows(); ++i) out.push_back({lm(i, 0), lm(i, 1)});
  return out;
}

LandmarkSet landmarks_from_json(const nlohmann::json& j) {
  LandmarkSet lm(static_cast<Eigen::Index>(j.size()), 2);
  for (size_t i = 0; i < j.size(); ++i) {
    lm(static_cast<Eigen::Index>(i), 0) = j[i].at(0).get<double>();
    lm(static_cast<Eigen::Index>(i), 1) = j[i].at(1).get<double>();
  }
  return lm;
}

namespace {

// Splits "http://host:port/some/prefix" into scheme+authority and path prefix.
std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::InvalidArgument, "bad URL " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

}  // namespace

JsonHttpClient::JsonHttpClient(const std::string& base_url) : base_url_(base_url) {
  auto [host, prefix] = split_url(base_url);
  prefix_ = std::move(prefix);
  client_ = std::make_unique<httplib::Client>(host);
  client_->set_read_timeout(600, 0);
}

JsonHttpClient::~JsonHttpClient() = default;

std::string JsonHttpClient::post_text(const std::string& path, const std::string& body,
                                      Errc failure_code) {
  std::lock_guard lock(mutex_);
  const auto res = client_->Post(prefix_ + path, body, "application/json");
  if (!res) {
    throw Error(failure_code, base_url_ + path + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(failure_code, base_url_ + path + ": HTTP " + std::to_string(res->status));
  }
  return res->body;
}

nlohmann::json JsonHttpClient::post(const std::string& path, const nlohmann::json& body,
                                    Errc failure_code) {
  const std::string reply = post_text(path, body.dump() + "\n", failure_code);
  try {
    return nlohmann::json::parse(reply);
  } catch (const nlohmann::json::exception& e) {
    throw Error(failure_code, base_url_ + path + ": malformed JSON: " + e.what());
  }
}

}  // namespace easyphoto::detail
