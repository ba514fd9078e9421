#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace semcomm {

enum class ErrorCode {
  InvalidParameter,
  InvalidInput,
  InvalidConfig,
  InvalidLabel,
  InvalidRank,
  InvalidSpec,
  InvalidTarget,
  NumericFailure,
  ParseError,
  OovError,
  DegenerateInput,
  DegenerateChannel,
  PreconditionViolation,
  Diverged,
  TrainingDiverged,
  SingularFeature,
  TooLarge,
  NotAPacket,
  CorruptPacket,
  TruncatedPacket,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

// Every module reports failures through this type. The message is prefixed
// with "module/stage:" context when an error crosses a pipeline stage.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t offset, std::string expected, const std::string& message)
      : Error(ErrorCode::ParseError, message), offset_(offset), expected_(std::move(expected)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::size_t offset_;
  std::string expected_;
};

// Packet errors carry two numbers: computed/stored CRC for corrupt packets,
// expected/actual byte length for truncated ones.
class PacketError : public Error {
 public:
  PacketError(ErrorCode code, std::uint64_t first, std::uint64_t second, const std::string& message)
      : Error(code, message), first_(first), second_(second) {}

  std::uint64_t first() const noexcept { return first_; }
  std::uint64_t second() const noexcept { return second_; }

 private:
  std::uint64_t first_;
  std::uint64_t second_;
};

// Rethrows `e` (an Error) with "module/stage: " prepended to its message.
[[noreturn]] void rethrow_with_context(const Error& e, std::string_view module, std::string_view stage);

}  // namespace semcomm
