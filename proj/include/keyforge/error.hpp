#pragma once

#include <stdexcept>
#include <string>

namespace keyforge {

/// Base of every error raised by the toolkit. `kind()` is a stable short tag
/// used by the CLI's single-line error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define KEYFORGE_DEFINE_ERROR(Name, tag)                                     \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& message) : Error(tag, message) {}       \
  };

KEYFORGE_DEFINE_ERROR(SchemaError, "schema")
KEYFORGE_DEFINE_ERROR(ParseError, "parse")
KEYFORGE_DEFINE_ERROR(EmptyDatasetError, "empty-dataset")
KEYFORGE_DEFINE_ERROR(ConfigError, "config")
KEYFORGE_DEFINE_ERROR(LookupError, "lookup")
KEYFORGE_DEFINE_ERROR(InsufficientDataError, "insufficient-data")
KEYFORGE_DEFINE_ERROR(ShapeError, "shape")
KEYFORGE_DEFINE_ERROR(NumericError, "numeric")
KEYFORGE_DEFINE_ERROR(TrainingError, "training")
KEYFORGE_DEFINE_ERROR(EvaluationError, "evaluation")
KEYFORGE_DEFINE_ERROR(CalibrationError, "calibration")
KEYFORGE_DEFINE_ERROR(FormatError, "format")
KEYFORGE_DEFINE_ERROR(IoError, "io")

#undef KEYFORGE_DEFINE_ERROR

}  // namespace keyforge
