#pragma once

#include <stdexcept>
#include <string>

namespace vpbench {

/// Base class for all toolkit failures. CLI maps these to exit code 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Tensor/layer dimensionality violations.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(what) {}
};

/// Filesystem and serialization failures, with path context.
class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(what) {}
};

/// Request for a statistic that is undefined on the given data
/// (e.g. R^2 on zero-variance targets).
class DegenerateInputError : public Error {
public:
    explicit DegenerateInputError(const std::string& what) : Error(what) {}
};

}  // namespace vpbench
