#pragma once

#include <stdexcept>
#include <string>

namespace prmcs {

/// Process exit codes used by the command-line tool. Every library error maps
/// onto one of these through Error::exit_code().
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInputParse = 2,
  kShapeMismatch = 3,
  kReference = 4,
  kDegenerate = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& name, const std::string& detail)
      : std::runtime_error(name + ": " + detail), code_(code), detail_(detail) {}

  ExitCode exit_code() const noexcept { return code_; }

  /// The message without the error-name prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ExitCode code_;
  std::string detail_;
};

#define PRMCS_DEFINE_ERROR(Name, Code)                      \
  class Name : public Error {                               \
   public:                                                  \
    explicit Name(const std::string& what)                  \
        : Error(ExitCode::Code, #Name, what) {}               \
  };

// Input parsing / validation.
PRMCS_DEFINE_ERROR(InvalidRecord, kInputParse)
PRMCS_DEFINE_ERROR(ParseError, kInputParse)
PRMCS_DEFINE_ERROR(BadMagic, kInputParse)
PRMCS_DEFINE_ERROR(VersionMismatch, kInputParse)
PRMCS_DEFINE_ERROR(TruncatedFile, kInputParse)
PRMCS_DEFINE_ERROR(DatasetTooSmall, kInputParse)

// Shapes and manifests.
PRMCS_DEFINE_ERROR(DimensionMismatch, kShapeMismatch)
PRMCS_DEFINE_ERROR(ShapeMismatch, kShapeMismatch)
PRMCS_DEFINE_ERROR(ManifestMismatch, kShapeMismatch)

// Reference resolution.
PRMCS_DEFINE_ERROR(UnknownImageId, kReference)
PRMCS_DEFINE_ERROR(MissingOriginal, kReference)

// Statistics.
PRMCS_DEFINE_ERROR(DegenerateInput, kDegenerate)
PRMCS_DEFINE_ERROR(ZeroOriginalMean, kDegenerate)

#undef PRMCS_DEFINE_ERROR

}  // namespace prmcs
