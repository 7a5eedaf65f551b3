#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace diffcl {

inline constexpr const char* kArtifactVersion = "0.1.0";
inline constexpr int kCheckpointFormatVersion = 1;

// Error taxonomy. The CLI maps these to distinct exit codes
// (config -> 2, io -> 3, numeric -> 4).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or unsupported file contents (still an IO-class failure).
struct FormatError : IoError {
    using IoError::IoError;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Contract violations on tensor shapes / channel arithmetic.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a, used for config hashes and run manifests.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(s.data(), s.size());
}

std::string hex64(std::uint64_t v);

}  // namespace diffcl
