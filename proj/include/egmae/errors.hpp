#pragma once

#include <stdexcept>
#include <string>

namespace egmae {

// Every error raised by the library derives from Error so callers can catch
// broadly; the concrete type carries the category the CLI maps to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EGMAE_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

// tensor_autodiff
EGMAE_DEFINE_ERROR(DimensionError)
EGMAE_DEFINE_ERROR(ParameterError)
EGMAE_DEFINE_ERROR(IndexError)
EGMAE_DEFINE_ERROR(ContractError)

// entropy_corruption
EGMAE_DEFINE_ERROR(TilingError)
EGMAE_DEFINE_ERROR(RangeError)
EGMAE_DEFINE_ERROR(GridError)

// model_zoo / cli
EGMAE_DEFINE_ERROR(ConfigError)
EGMAE_DEFINE_ERROR(UsageError)

// data_pipeline
EGMAE_DEFINE_ERROR(ParseError)
EGMAE_DEFINE_ERROR(DecodeError)
EGMAE_DEFINE_ERROR(DataError)
EGMAE_DEFINE_ERROR(IoError)

// training
EGMAE_DEFINE_ERROR(TrainingError)

// evaluation_ensemble
EGMAE_DEFINE_ERROR(AlignmentError)
EGMAE_DEFINE_ERROR(MetricError)

#undef EGMAE_DEFINE_ERROR

class CheckpointError : public Error {
 public:
  enum class Kind { BadMagic, Truncated, IndexMismatch, ConfigMismatch, Checksum, Io };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace egmae
