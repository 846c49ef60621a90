#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tkg {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed text input (GML, JSON lines, script source). `line` is 1-based, 0 when unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Well-formed input that violates a schema (missing field, unknown enum value).
class SchemaError : public Error {
public:
    SchemaError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InvalidGraph : public Error {
public:
    using Error::Error;
};

class MissingAttacker : public Error {
public:
    MissingAttacker() : Error("graph has no attacker node") {}
};

}  // namespace tkg
