#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikeattn {

// Error taxonomy. Everything derives from std::runtime_error so the CLI can
// map any failure to a single exit code; the distinct types exist so tests
// and callers can discriminate.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};
struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error("argument error: " + msg) {}
};
struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& msg) : std::runtime_error("geometry error: " + msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct StatsError : std::runtime_error {
    explicit StatsError(const std::string& msg) : std::runtime_error("uninitialized-stats error: " + msg) {}
};
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error("corrupt-checkpoint error: " + msg) {}
};
struct SignalError : std::runtime_error {
    explicit SignalError(const std::string& msg) : std::runtime_error("signal error: " + msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace spikeattn
