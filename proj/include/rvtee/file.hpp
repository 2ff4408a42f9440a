// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "rvtee/bytes.hpp"

namespace rvtee {

/// Owning POSIX file descriptor with positional I/O. Errors throw Error(Io).
class File {
 public:
  enum class Mode { Read, ReadWrite, Create };

  File() = default;
  File(const std::filesystem::path& path, Mode mode);
  ~File();

  File(File&& other) noexcept;
  File& operator=(File&& other) noexcept;
  File(const File&) = delete;
  File& operator=(const File&) = delete;

  bool is_open() const noexcept { return fd_ >= 0; }
  const std::filesystem::path& path() const noexcept { return path_; }

  std::uint64_t size() const;
  void read_at(std::uint64_t offset, std::span<std::uint8_t> out) const;
  void write_at(std::uint64_t offset, ByteView data);
  void truncate(std::uint64_t length);
  void sync();

 private:
  int fd_ = -1;
  std::filesystem::path path_;
};

Bytes read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
/// Replaces the file contents (write to temp + rename).
void write_file(const std::filesystem::path& path, ByteView data);

}  // namespace rvtee
