#pragma once

#include <stdexcept>
#include <string>

namespace polyvae {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by bad input data (files, corpora, shapes). The CLI maps
/// these to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

class MalformedFile : public DataError {
 public:
  using DataError::DataError;
};

class EmptyAfterQuantization : public DataError {
 public:
  using DataError::DataError;
};

class TooShort : public DataError {
 public:
  using DataError::DataError;
};

class TooFewSongs : public DataError {
 public:
  using DataError::DataError;
};

class DimensionMismatch : public DataError {
 public:
  using DataError::DataError;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class IndexOutOfRange : public DataError {
 public:
  using DataError::DataError;
};

class StaleCache : public DataError {
 public:
  using DataError::DataError;
};

class EmptyCounts : public DataError {
 public:
  using DataError::DataError;
};

/// Training produced a NaN or infinite loss. Exit code 3.
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

}  // namespace polyvae
