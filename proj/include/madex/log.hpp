#pragma once

#include <spdlog/spdlog.h>

namespace madex {

/// Applies MADEX_LOG (error|info|debug, default error) to the global logger.
/// Safe to call repeatedly.
void configure_logging();

}  // namespace madex
