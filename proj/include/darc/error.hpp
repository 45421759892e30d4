#pragma once

#include <stdexcept>
#include <string>

namespace darc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not agree with an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward() on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid settings: bad split fractions, incompatible ablation flags, ...
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A metric is mathematically undefined for the given input (e.g. AUROC
// with a single class present).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kTrailingBytes,
  kLabelOutOfRange,
  kNonFinite,
  kSchemaMismatch,
  kIo,
};

inline const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic: return "bad magic";
    case FormatErrorKind::kUnsupportedVersion: return "unsupported version";
    case FormatErrorKind::kTruncated: return "truncated payload";
    case FormatErrorKind::kTrailingBytes: return "trailing bytes";
    case FormatErrorKind::kLabelOutOfRange: return "label out of range";
    case FormatErrorKind::kNonFinite: return "non-finite value";
    case FormatErrorKind::kSchemaMismatch: return "schema mismatch";
    case FormatErrorKind::kIo: return "i/o error";
  }
  return "format error";
}

// Malformed or incompatible on-disk data.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace darc
