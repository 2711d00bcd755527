#pragma once

#include <stdexcept>
#include <string>

namespace opstyle {

// Precondition / argument violations.
[[noreturn]] inline void fail_arg(const std::string& msg) {
    throw std::invalid_argument(msg);
}

// IO, format and runtime failures.
[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void check_arg(bool cond, const std::string& msg) {
    if (!cond) fail_arg(msg);
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

} // namespace opstyle
