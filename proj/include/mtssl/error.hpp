#pragma once

#include <stdexcept>
#include <string>

namespace mtssl {

// Base of every error the library throws. Catch this to handle any failure
// uniformly (the CLI maps it to a nonzero exit code).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MTSSL_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  };

MTSSL_DEFINE_ERROR(NonInvertible)
MTSSL_DEFINE_ERROR(DegenerateTransform)
MTSSL_DEFINE_ERROR(OutOfRangeInput)
MTSSL_DEFINE_ERROR(NonFinite)
MTSSL_DEFINE_ERROR(BadClassId)
MTSSL_DEFINE_ERROR(DegenerateBox)
MTSSL_DEFINE_ERROR(MissingLabel)
MTSSL_DEFINE_ERROR(ShapeMismatch)
MTSSL_DEFINE_ERROR(InvalidScenario)
MTSSL_DEFINE_ERROR(EmptyPartition)
MTSSL_DEFINE_ERROR(EmptyMatrix)
MTSSL_DEFINE_ERROR(GraphReuse)
MTSSL_DEFINE_ERROR(IoError)
MTSSL_DEFINE_ERROR(ConfigError)

#undef MTSSL_DEFINE_ERROR

}  // namespace mtssl
