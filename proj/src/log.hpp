#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <memory>

namespace easyphoto {

// Library diagnostics go to stderr; stdout belongs to the caller.
inline spdlog::logger& logger() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    if (auto existing = spdlog::get("easyphoto")) return existing;
    return spdlog::stderr_color_mt("easyphoto");
  }();
  return *instance;
}

}  // namespace easyphoto
