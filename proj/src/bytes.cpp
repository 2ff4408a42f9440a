// SPDX-License-Identifier: Apache-2.0
#include "rvtee/bytes.hpp"

#include "rvtee/error.hpp"

namespace rvtee {

namespace {
int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}
}  // namespace

std::string to_hex(ByteView b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (auto v : b) {
    out.push_back(kDigits[v >> 4]);
    out.push_back(kDigits[v & 0xf]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(ErrorCode::Parse, "hex string has odd length");
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = hex_value(hex[i]);
    int lo = hex_value(hex[i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::Parse, "invalid hex digit");
    out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
  }
  return out;
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidGeometry: return "InvalidGeometry";
    case ErrorCode::KeyExhausted: return "KeyExhausted";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::UnknownLog: return "UnknownLog";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::Parse: return "ParseError";
    case ErrorCode::Semantic: return "SemanticError";
    case ErrorCode::OutOfOrderEvent: return "OutOfOrderEvent";
    case ErrorCode::MalformedEvent: return "MalformedEvent";
    case ErrorCode::OversizeLine: return "OversizeLine";
    case ErrorCode::Io: return "IoError";
    case ErrorCode::Config: return "ConfigError";
  }
  return "Unknown";
}

ParseError::ParseError(std::size_t line, std::size_t column, const std::string& msg)
    : Error(ErrorCode::Parse,
            std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
      line_(line),
      column_(column) {}

}  // namespace rvtee
