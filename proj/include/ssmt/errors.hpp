#pragma once

#include <stdexcept>
#include <string>

namespace ssmt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or dimensions that do not conform for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition (non-scalar loss, non-binary mask, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf where finite values are required.
class NumericFault : public Error {
 public:
  using Error::Error;
};

class DegenerateSoftmax : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration or loss weights; rejected before any work starts.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class CorruptCheckpoint : public Error {
 public:
  using Error::Error;
};

}  // namespace ssmt
