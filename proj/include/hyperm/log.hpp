#pragma once

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace hyperm {

// Shared stderr logger. The level comes from HYPERM_LOG (error, warn, info,
// debug) and defaults to warn.
inline spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_color_mt("hyperm");
    l->set_pattern("[%l] %v");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("HYPERM_LOG")) {
      const std::string v(env);
      if (v == "error") level = spdlog::level::err;
      else if (v == "warn") level = spdlog::level::warn;
      else if (v == "info") level = spdlog::level::info;
      else if (v == "debug") level = spdlog::level::debug;
    }
    l->set_level(level);
    return l;
  }();
  return *instance;
}

}  // namespace hyperm
