#include "madex/log.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>

#include <cstdlib>
#include <string_view>

namespace madex {

void configure_logging() {
    static const bool once = [] {
        auto logger = spdlog::stderr_color_mt("madex");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
        return true;
    }();
    (void)once;
    const char* env = std::getenv("MADEX_LOG");
    const std::string_view level = env ? env : "error";
    if (level == "debug")
        spdlog::set_level(spdlog::level::debug);
    else if (level == "info")
        spdlog::set_level(spdlog::level::info);
    else
        spdlog::set_level(spdlog::level::err);
}

}  // namespace madex
