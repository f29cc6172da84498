#pragma once

#include <stdexcept>
#include <string>

namespace itx {

enum class Errc {
  InvalidIvField,
  InvalidFrameSize,
  InvalidPayload,
  InvalidFrame,
  AuthenticationFailure,
  IvSequenceViolation,
  InvalidLength,
  InvalidRegisterProgram,
  ContextBusy,
  KeyNotLoaded,
  IndexOutOfRange,
  SecurityException,
  FrameInterleavingViolation,
  AlreadyProvisioned,
  NotProvisioned,
  FirmwareAuthFailure,
  PartyAuthFailure,
  InvalidPhase,
  KeyExchangeFailure,
  InvalidSyncPoint,
  SupplyChainReject,
  InvalidShare,
  ImageTooLarge,
  AccessDenied,
  ScheduleInfeasible,
  NoCapability,
  InvalidEncoding,
  InvalidArgument,
  IoError,
};

const char* to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail);

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace itx
