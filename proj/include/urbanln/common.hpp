#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace urbanln {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration value or violated invariant supplied by the caller.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input records / files.
class DataError : public Error {
public:
    using Error::Error;
};

// A pluggable model client failed.
class ClientError : public Error {
public:
    using Error::Error;
};

// Internal state violation (shape mismatch, non-finite loss, bad checkpoint).
class StateError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Numeric argument outside its mathematical domain (tau <= 0, negative log input).
class DomainError : public Error {
public:
    using Error::Error;
};

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e9b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Seed fan-out: every stage draws its own RNG seed from the single pipeline
// seed, so any stage can be reproduced in isolation.
//   stage_seed = splitmix64(root_seed ^ fnv1a64(stage_name))
constexpr std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view stage) {
    return splitmix64(root_seed ^ fnv1a64(stage));
}

} // namespace urbanln
