#pragma once

#include <stdexcept>
#include <string>

namespace synthaug {

// Incompatible tensor geometry, detected when an op or graph node is built.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf produced by a training or sampling step.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed file on disk (PGM, checkpoint, CSV).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid experiment configuration. `key_path` is the dotted JSON path of the offending key.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string key_path, const std::string& what)
        : std::invalid_argument(key_path + ": " + what), key_path_(std::move(key_path)) {}

    const std::string& key_path() const noexcept { return key_path_; }

private:
    std::string key_path_;
};

} // namespace synthaug
