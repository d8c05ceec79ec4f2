#pragma once

#include <stdexcept>
#include <string>

namespace geoedit {

// Base class for every failure raised by the library. Each subclass maps
// to one failure kind named in the module contracts; the CLI translates
// them into stable exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GEOEDIT_DEFINE_ERROR(Name)             \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what)     \
        : Error(#Name ": " + what) {}          \
  }

GEOEDIT_DEFINE_ERROR(BadParams);
GEOEDIT_DEFINE_ERROR(DegeneratePitch);
GEOEDIT_DEFINE_ERROR(NotARotation);
GEOEDIT_DEFINE_ERROR(BehindCamera);
GEOEDIT_DEFINE_ERROR(ShapeMismatch);
GEOEDIT_DEFINE_ERROR(CameraInsideObject);
GEOEDIT_DEFINE_ERROR(EmptyTarget);
GEOEDIT_DEFINE_ERROR(BadRanges);
GEOEDIT_DEFINE_ERROR(MissingBackground);
GEOEDIT_DEFINE_ERROR(NonFinite);
GEOEDIT_DEFINE_ERROR(MissingOutput);
GEOEDIT_DEFINE_ERROR(IoError);
GEOEDIT_DEFINE_ERROR(ConfigError);
GEOEDIT_DEFINE_ERROR(IncompatibleCheckpoint);

#undef GEOEDIT_DEFINE_ERROR

}  // namespace geoedit
