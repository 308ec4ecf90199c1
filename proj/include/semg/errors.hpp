#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace semg {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RangeError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class DesignError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class DegenerateInputError : public Error { using Error::Error; };
class CalibrationError : public Error { using Error::Error; };
class EmptySplitError : public Error { using Error::Error; };

// Raised by the session state machine; carries the phase that refused the call.
class ConflictError : public Error {
public:
    ConflictError(const std::string& what, std::string phase)
        : Error(what), phase_(std::move(phase)) {}
    const std::string& phase() const noexcept { return phase_; }

private:
    std::string phase_;
};

// A recording that violates one or more invariants. Every violation is listed.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> issues)
        : Error(join(issues)), issues_(std::move(issues)) {}
    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    static std::string join(const std::vector<std::string>& issues) {
        std::string out = "recording validation failed:";
        for (const auto& i : issues) out += "\n  " + i;
        return out;
    }
    std::vector<std::string> issues_;
};

}  // namespace semg
