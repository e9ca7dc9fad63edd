#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sepsislab {

// Base for every error this library raises on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the 1-based line number when known (0 otherwise).
class DataError : public Error {
public:
    DataError(const std::string& message, std::size_t line = 0)
        : Error(line == 0 ? message : message + " (line " + std::to_string(line) + ")"),
          line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

// A variable name outside the active vocabulary.
class VocabularyError : public Error {
public:
    using Error::Error;
};

// Shapes, vocabularies or settings that do not fit together.
class ConfigError : public Error {
public:
    using Error::Error;
};

// An argument violates a documented precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

}  // namespace sepsislab
