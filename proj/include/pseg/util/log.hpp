#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace pseg::util {

enum class LogLevel : int { error = 0, info = 1, debug = 2 };

/// Level taken from the PSEG_LOG environment variable (error|info|debug),
/// read once per process. Unset or unrecognized values mean info.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("PSEG_LOG");
        if (env == nullptr) return LogLevel::info;
        const std::string v(env);
        if (v == "error") return LogLevel::error;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

inline void log_at(LogLevel at, const char* tag, const std::string& msg) {
    if (static_cast<int>(at) > static_cast<int>(log_level())) return;
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
    std::fflush(stderr);
}

inline void log_info(const std::string& msg) { log_at(LogLevel::info, "info", msg); }
inline void log_debug(const std::string& msg) { log_at(LogLevel::debug, "debug", msg); }

}  // namespace pseg::util
