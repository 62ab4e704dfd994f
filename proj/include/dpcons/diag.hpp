// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace dpcons {

struct SourceLoc {
    int line = 0;   // 1-based; 0 = unknown
    int column = 0; // 1-based
};

// A single diagnostic. `code` is a short stable identifier used by tests,
// `message` is the human-readable text.
struct Diag {
    std::string code;
    std::string message;
    SourceLoc loc;
};

using DiagList = std::vector<Diag>;

inline Diag make_diag(std::string code, std::string message, SourceLoc loc = {}) {
    return Diag{std::move(code), std::move(message), loc};
}

inline std::string format_diag(const Diag& d) {
    std::string out;
    if (d.loc.line > 0) {
        out += std::to_string(d.loc.line);
        out += ":";
        out += std::to_string(d.loc.column);
        out += ": ";
    }
    out += "error [";
    out += d.code;
    out += "]: ";
    out += d.message;
    return out;
}

} // namespace dpcons
