#include "itx/error.hpp"

namespace itx {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::InvalidIvField: return "InvalidIvField";
    case Errc::InvalidFrameSize: return "InvalidFrameSize";
    case Errc::InvalidPayload: return "InvalidPayload";
    case Errc::InvalidFrame: return "InvalidFrame";
    case Errc::AuthenticationFailure: return "AuthenticationFailure";
    case Errc::IvSequenceViolation: return "IvSequenceViolation";
    case Errc::InvalidLength: return "InvalidLength";
    case Errc::InvalidRegisterProgram: return "InvalidRegisterProgram";
    case Errc::ContextBusy: return "ContextBusy";
    case Errc::KeyNotLoaded: return "KeyNotLoaded";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::SecurityException: return "SecurityException";
    case Errc::FrameInterleavingViolation: return "FrameInterleavingViolation";
    case Errc::AlreadyProvisioned: return "AlreadyProvisioned";
    case Errc::NotProvisioned: return "NotProvisioned";
    case Errc::FirmwareAuthFailure: return "FirmwareAuthFailure";
    case Errc::PartyAuthFailure: return "PartyAuthFailure";
    case Errc::InvalidPhase: return "InvalidPhase";
    case Errc::KeyExchangeFailure: return "KeyExchangeFailure";
    case Errc::InvalidSyncPoint: return "InvalidSyncPoint";
    case Errc::SupplyChainReject: return "SupplyChainReject";
    case Errc::InvalidShare: return "InvalidShare";
    case Errc::ImageTooLarge: return "ImageTooLarge";
    case Errc::AccessDenied: return "AccessDenied";
    case Errc::ScheduleInfeasible: return "ScheduleInfeasible";
    case Errc::NoCapability: return "NoCapability";
    case Errc::InvalidEncoding: return "InvalidEncoding";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

}  // namespace itx
