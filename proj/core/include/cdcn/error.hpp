#pragma once

#include <stdexcept>
#include <string>

namespace cdcn {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimension / layout mismatches.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid argument values, configs, manifests. CLI maps these to exit code 1.
struct ValueError : Error {
    explicit ValueError(const std::string& msg) : Error(msg) {}
};

// File system / decode failures. CLI maps these to exit code 2.
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Failures during optimization (non-finite gradients etc.). Exit code 2.
struct TrainError : Error {
    explicit TrainError(const std::string& msg) : Error(msg) {}
};

}  // namespace cdcn
