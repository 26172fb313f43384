#pragma once

#include <stdexcept>
#include <string>

namespace cbert {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CBERT_DEFINE_ERROR(name) \
  class name : public Error {    \
   public:                       \
    using Error::Error;          \
  }

CBERT_DEFINE_ERROR(InputError);    // malformed caller input
CBERT_DEFINE_ERROR(LengthError);   // sequence too short or too long
CBERT_DEFINE_ERROR(IndexError);    // index outside a valid range
CBERT_DEFINE_ERROR(ShapeError);    // tensor shapes disagree
CBERT_DEFINE_ERROR(NumericError);  // NaN/Inf where finite values are required
CBERT_DEFINE_ERROR(ConfigError);   // inconsistent configuration
CBERT_DEFINE_ERROR(DataError);     // dataset contents violate the task
CBERT_DEFINE_ERROR(ModeError);     // character/wordpiece frontend mismatch
CBERT_DEFINE_ERROR(FormatError);   // checkpoint or file layout invalid
CBERT_DEFINE_ERROR(IoError);       // filesystem failure

#undef CBERT_DEFINE_ERROR

}  // namespace cbert
