#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace pseg {

/// Base error for the toolkit. Carries a stable machine-parseable code
/// (used by the CLI as `code: message`) plus a human message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& m) : Error("parameter_error", m) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& m) : Error("shape_error", m) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& m) : Error("numeric_error", m) {}
};

class SpecError : public Error {
public:
    explicit SpecError(const std::string& m) : Error("spec_error", m) {}
};

class SamplingError : public Error {
public:
    explicit SamplingError(const std::string& m) : Error("sampling_error", m) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& m) : Error("io_error", m) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

}  // namespace pseg
