#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

// Minimal stderr logger; the level comes from SURFOPT_LOG={error,info,debug}.
namespace surfopt::log {

enum class Level { error = 0, info = 1, debug = 2 };

inline Level level() {
    static const Level lvl = [] {
        const char* env = std::getenv("SURFOPT_LOG");
        const std::string_view v = env ? env : "";
        if (v == "debug") return Level::debug;
        if (v == "info") return Level::info;
        return Level::error;
    }();
    return lvl;
}

inline void write(Level lvl, std::string_view tag, std::string_view msg) {
    if (static_cast<int>(lvl) > static_cast<int>(level())) return;
    static std::mutex mu;
    std::lock_guard lock(mu);
    std::cerr << "[surfopt " << tag << "] " << msg << '\n';
}

inline void error(std::string_view msg) { write(Level::error, "error", msg); }
inline void info(std::string_view msg) { write(Level::info, "info", msg); }
inline void debug(std::string_view msg) { write(Level::debug, "debug", msg); }

}  // namespace surfopt::log
