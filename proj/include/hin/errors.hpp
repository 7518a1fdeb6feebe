#pragma once

#include <stdexcept>
#include <string>

namespace hin {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands of a tensor op or layer.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Softmax/attention with every position masked out.
class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

// Malformed corpus, vector file or config input.
class IngestionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Checkpoint contents disagree with the model configuration.
class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace hin
