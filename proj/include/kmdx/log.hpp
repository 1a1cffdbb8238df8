#pragma once

#include <iostream>
#include <string>

namespace kmdx {

inline void log_warn(const std::string& msg) {
    std::cerr << "[kmdx] warning: " << msg << "\n";
}

inline void log_info(const std::string& msg) {
    std::cerr << "[kmdx] " << msg << "\n";
}

}  // namespace kmdx
