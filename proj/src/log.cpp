#include "ddp/log.hpp"

#include <cstdlib>
#include <memory>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

namespace ddp {

spdlog::logger& log() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto logger = spdlog::stderr_color_mt("ddp");
    auto level = spdlog::level::warn;
    if (const char* env = std::getenv("DDP_LOG")) {
      const auto parsed = spdlog::level::from_str(env);
      // from_str maps unknown names to off; only honour it when asked for.
      if (parsed != spdlog::level::off || std::string(env) == "off") level = parsed;
    }
    logger->set_level(level);
    logger->set_pattern("[%l] %v");
    return logger;
  }();
  return *instance;
}

}  // namespace ddp
