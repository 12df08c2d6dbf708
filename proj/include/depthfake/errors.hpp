#pragma once

#include <stdexcept>
#include <string>

namespace depthfake {

// Base for every error the library raises on purpose. The CLI maps the
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or invalid arguments (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A required external resource (dataset, weights, model file) is absent (exit code 3).
class MissingResource : public Error {
 public:
  using Error::Error;
};

// Tensor or image shapes that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// The face detector found nothing in the frame.
class NoFace : public Error {
 public:
  using Error::Error;
};

// Frame too small for the requested crop.
class UpstreamTooSmall : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or activations during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Timer or benchmark harness misuse.
class BenchError : public Error {
 public:
  using Error::Error;
};

}  // namespace depthfake
