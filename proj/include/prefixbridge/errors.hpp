// SPDX-License-Identifier: Apache-2.0
//
// Exception types shared by every module. Each failure class named in the
// module contracts gets its own type so callers (and the CLI exit-code
// mapping) can tell them apart.

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pfx {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// A non-finite value appeared in the output of a tensor operation.
class NumericsError : public Error {
public:
    using Error::Error;
};

class InvalidBatchError : public Error {
public:
    using Error::Error;
};

class DeterminismError : public Error {
public:
    using Error::Error;
};

class TrainingStateError : public Error {
public:
    using Error::Error;
};

class EmptyReportError : public Error {
public:
    using Error::Error;
};

class InvalidCorpusError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DegenerateBasisError : public Error {
public:
    using Error::Error;
};

class InvalidSampleError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class LengthError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class VersionError : public Error {
public:
    using Error::Error;
};

class InvalidInputError : public Error {
public:
    using Error::Error;
};

}  // namespace pfx
