// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rvtee {

enum class ErrorCode {
  InvalidGeometry,
  KeyExhausted,
  EmptyData,
  OutOfRange,
  UnknownLog,
  StorageFailure,
  MalformedHeader,
  MalformedRecord,
  Parse,
  Semantic,
  OutOfOrderEvent,
  MalformedEvent,
  OversizeLine,
  Io,
  Config,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Property-spec syntax error; line and column are 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& msg);

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace rvtee
