#include "easyphoto/error.hpp"

namespace easyphoto {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::CollinearLandmarks: return "CollinearLandmarks";
    case Errc::SingularTransform: return "SingularTransform";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::DegenerateHull: return "DegenerateHull";
    case Errc::DegenerateCrop: return "DegenerateCrop";
    case Errc::AdapterFailure: return "AdapterFailure";
    case Errc::KeyMismatch: return "KeyMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::AllZeroWeights: return "AllZeroWeights";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::InvalidRequest: return "InvalidRequest";
    case Errc::NoFacesFound: return "NoFacesFound";
    case Errc::AmbiguousFace: return "AmbiguousFace";
    case Errc::TrainerFailure: return "TrainerFailure";
    case Errc::EmptyReport: return "EmptyReport";
    case Errc::UserCountMismatch: return "UserCountMismatch";
    case Errc::UserNotTrained: return "UserNotTrained";
    case Errc::TemplateNotFound: return "TemplateNotFound";
    case Errc::NotEnoughImages: return "NotEnoughImages";
    case Errc::TooManyImages: return "TooManyImages";
    case Errc::UndecodableImage: return "UndecodableImage";
    case Errc::JobAlreadyRunning: return "JobAlreadyRunning";
    case Errc::NotFound: return "NotFound";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace easyphoto
