#pragma once

#include <spdlog/spdlog.h>

namespace ddp {

/// Library-wide logger writing to stderr. Verbosity comes from the DDP_LOG
/// environment variable (trace, debug, info, warn, error, off); default warn.
spdlog::logger& log();

}  // namespace ddp
