#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace kmdx {

using Shape = std::vector<int>;

// Shape/contract violations carry the offending shapes in the message.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Internal invariant broken or API misuse.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Malformed input data (out-of-vocabulary ids, schema violations).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Filesystem / serialization failures.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Numerical failure during training/eval (CLI exit code 3).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline long long shape_numel(const Shape& s) {
    long long n = 1;
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

// Round a double through IEEE binary32. Persisted parameter state lives on
// the float32 grid so checkpoint round-trips are exact.
inline double round_f32(double v) {
    return static_cast<double>(static_cast<float>(v));
}

}  // namespace kmdx
