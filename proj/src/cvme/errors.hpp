#ifndef CVME_ERRORS_HPP
#define CVME_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cvme {

// Base class for all recoverable estimation errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonConvergence : Error {
  using Error::Error;
};
struct SingularDesign : Error {
  using Error::Error;
};
struct SchemaMismatch : Error {
  using Error::Error;
};
struct SuperLearnerFailure : Error {
  using Error::Error;
};
struct MaxIterations : Error {
  using Error::Error;
};
struct PositivityViolation : Error {
  using Error::Error;
};
struct InsufficientValidation : Error {
  using Error::Error;
};
struct MissingKappa : Error {
  using Error::Error;
};
struct BootstrapFailure : Error {
  using Error::Error;
};
struct DonorPoolExhausted : Error {
  using Error::Error;
};
struct InvalidScenario : Error {
  using Error::Error;
};
struct RootFindFailure : Error {
  using Error::Error;
};
struct MissingReference : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace cvme

#endif
