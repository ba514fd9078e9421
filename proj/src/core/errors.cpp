#include "core/errors.hpp"

namespace semcomm {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidParameter: return "invalid-parameter";
    case ErrorCode::InvalidInput: return "invalid-input";
    case ErrorCode::InvalidConfig: return "invalid-config";
    case ErrorCode::InvalidLabel: return "invalid-label";
    case ErrorCode::InvalidRank: return "invalid-rank";
    case ErrorCode::InvalidSpec: return "invalid-spec";
    case ErrorCode::InvalidTarget: return "invalid-target";
    case ErrorCode::NumericFailure: return "numeric-failure";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::OovError: return "oov-error";
    case ErrorCode::DegenerateInput: return "degenerate-input";
    case ErrorCode::DegenerateChannel: return "degenerate-channel";
    case ErrorCode::PreconditionViolation: return "precondition-violation";
    case ErrorCode::Diverged: return "diverged-error";
    case ErrorCode::TrainingDiverged: return "training-diverged";
    case ErrorCode::SingularFeature: return "singular-feature";
    case ErrorCode::TooLarge: return "too-large";
    case ErrorCode::NotAPacket: return "not-a-packet";
    case ErrorCode::CorruptPacket: return "corrupt-packet";
    case ErrorCode::TruncatedPacket: return "truncated-packet";
    case ErrorCode::IoError: return "io-error";
  }
  return "unknown";
}

void rethrow_with_context(const Error& e, std::string_view module, std::string_view stage) {
  std::string msg;
  msg.reserve(module.size() + stage.size() + 4 + std::string_view(e.what()).size());
  msg.append(module).append("/").append(stage).append(": ").append(e.what());
  if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
    throw ParseError(pe->offset(), pe->expected(), msg);
  }
  if (const auto* pk = dynamic_cast<const PacketError*>(&e)) {
    throw PacketError(pk->code(), pk->first(), pk->second(), msg);
  }
  throw Error(e.code(), msg);
}

}  // namespace semcomm
