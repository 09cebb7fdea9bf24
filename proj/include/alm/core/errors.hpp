#pragma once

#include <stdexcept>
#include <string>

namespace alm {

// Every failure the toolkit reports is an alm::Error; the concrete subclass
// names the failure kind so callers (and the CLI exit-code mapping) can
// dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(const char* kind, const std::string& what)
      : std::runtime_error(std::string(kind) + ": " + what), kind_(kind) {}
  const char* kind() const noexcept { return kind_; }

 private:
  const char* kind_;
};

#define ALM_DEFINE_ERROR(Name)                                              \
  class Name : public Error {                                                \
   public:                                                                   \
    explicit Name(const std::string& what) : Error(#Name, what) {}           \
  }

// audio
ALM_DEFINE_ERROR(InvalidAudio);
ALM_DEFINE_ERROR(UnsupportedFormat);
// shared
ALM_DEFINE_ERROR(InvalidConfig);
ALM_DEFINE_ERROR(InvalidInput);
ALM_DEFINE_ERROR(IoError);
// compute core
ALM_DEFINE_ERROR(ShapeError);
ALM_DEFINE_ERROR(EmptyLoss);
ALM_DEFINE_ERROR(NonFiniteGradient);
// model
ALM_DEFINE_ERROR(SequenceTooLong);
ALM_DEFINE_ERROR(SlotMismatch);
ALM_DEFINE_ERROR(CheckpointError);
// data
ALM_DEFINE_ERROR(VocabError);
ALM_DEFINE_ERROR(DecodeError);
ALM_DEFINE_ERROR(InsufficientData);
// training
ALM_DEFINE_ERROR(NonFiniteLoss);
ALM_DEFINE_ERROR(StageOrderError);
// eval
ALM_DEFINE_ERROR(InvalidReference);
ALM_DEFINE_ERROR(ScoringFailure);

#undef ALM_DEFINE_ERROR

}  // namespace alm
