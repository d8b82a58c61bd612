#pragma once

#include <stdexcept>
#include <string>

namespace taa {

// Base class for every error raised by the library. The `kind()` string is
// stable and is what the CLI and campaign reports print for skipped cells.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define TAA_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

TAA_DEFINE_ERROR(IncompatibleImageSize)
TAA_DEFINE_ERROR(LayerOutOfRange)
TAA_DEFINE_ERROR(GradientUnavailable)
TAA_DEFINE_ERROR(InvalidArgument)
TAA_DEFINE_ERROR(DuplicateModel)
TAA_DEFINE_ERROR(UnknownModel)
TAA_DEFINE_ERROR(EmptyTrainingSet)
TAA_DEFINE_ERROR(DimensionMismatch)
TAA_DEFINE_ERROR(DegenerateFeature)
TAA_DEFINE_ERROR(IdenticalImages)
TAA_DEFINE_ERROR(IoFailure)
TAA_DEFINE_ERROR(InsufficientData)
TAA_DEFINE_ERROR(UnsupportedParameter)
TAA_DEFINE_ERROR(DegenerateBaseline)
TAA_DEFINE_ERROR(IncompleteMatrix)
TAA_DEFINE_ERROR(ValidationError)

#undef TAA_DEFINE_ERROR

}  // namespace taa
