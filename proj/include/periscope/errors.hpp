#pragma once

#include <stdexcept>
#include <string>

namespace periscope {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File-format problems (bad magic, bad header, unparsable JSON/CSV rows).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Payload length disagrees with the declared shape.
class TruncationError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise invalid numeric content.
class DataError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// Two operands of a comparator do not agree in kind or shape.
class ComparatorError : public Error {
 public:
  using Error::Error;
};

// A comparator cannot produce a score for this pair (e.g. no keypoints);
// recorded as a missing score rather than aborting a run.
class UndefinedScoreError : public ComparatorError {
 public:
  using ComparatorError::ComparatorError;
};

class SizeError : public Error {
 public:
  using Error::Error;
};

class AnnotationError : public Error {
 public:
  using Error::Error;
};

class CatalogError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class SelectionError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace periscope
