#pragma once

#include <charconv>
#include <string>

namespace quadfun {

/// Shortest decimal text that parses back to the same double.
inline std::string shortest_text(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

}  // namespace quadfun
