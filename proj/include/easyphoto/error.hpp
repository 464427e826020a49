#pragma once

#include <stdexcept>
#include <string>

namespace easyphoto {

enum class Errc {
  InvalidArgument,
  LengthMismatch,
  CollinearLandmarks,
  SingularTransform,
  DimensionMismatch,
  DegenerateHull,
  DegenerateCrop,
  AdapterFailure,
  KeyMismatch,
  ShapeMismatch,
  AllZeroWeights,
  BackendUnavailable,
  InvalidRequest,
  NoFacesFound,
  AmbiguousFace,
  TrainerFailure,
  EmptyReport,
  UserCountMismatch,
  UserNotTrained,
  TemplateNotFound,
  NotEnoughImages,
  TooManyImages,
  UndecodableImage,
  JobAlreadyRunning,
  NotFound,
  IoError,
};

const char* to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(message) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

}  // namespace easyphoto
