#pragma once

#include <stdexcept>
#include <string>

namespace scm {

/// Base class for all recoverable failures raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed tabular input. Carries the 1-based line number (0 when the
/// failure is not tied to a line, e.g. an empty stream).
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// A study specification that does not resolve against a dataset.
class SpecError : public Error {
public:
    using Error::Error;
};

class DonorPoolError : public SpecError {
public:
    using SpecError::SpecError;
};

class InferenceError : public Error {
public:
    using Error::Error;
};

class BreakTestError : public Error {
public:
    using Error::Error;
};

class RegressionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ReportError : public Error {
public:
    using Error::Error;
};

}  // namespace scm
