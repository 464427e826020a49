#pragma once

#include "easyphoto/adapters.hpp"

#include <memory>
#include <string>

namespace easyphoto {

// JSON-over-HTTP clients for externally hosted models. Each POSTs to <base_url>/<verb>.
std::shared_ptr<const FaceDetector> make_external_detector(const std::string& base_url);
std::shared_ptr<const FaceEmbedder> make_external_embedder(const std::string& base_url);
std::shared_ptr<const SaliencyMatter> make_external_matter(const std::string& base_url);
std::shared_ptr<const SkinRetoucher> make_external_retoucher(const std::string& base_url);
std::shared_ptr<const PortraitEnhancer> make_external_enhancer(const std::string& base_url);
std::shared_ptr<const FaceFuser> make_external_fuser(const std::string& base_url);

}  // namespace easyphoto
