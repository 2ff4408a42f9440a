// SPDX-License-Identifier: Apache-2.0
#include "rvtee/file.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

#include "rvtee/error.hpp"

namespace rvtee {

namespace {
[[noreturn]] void io_fail(const std::filesystem::path& path, const char* what) {
  throw Error(ErrorCode::Io, std::string(what) + " " + path.string() + ": " + std::strerror(errno));
}
}  // namespace

File::File(const std::filesystem::path& path, Mode mode) : path_(path) {
  int flags = O_CLOEXEC;
  switch (mode) {
    case Mode::Read: flags |= O_RDONLY; break;
    case Mode::ReadWrite: flags |= O_RDWR; break;
    case Mode::Create: flags |= O_RDWR | O_CREAT; break;
  }
  fd_ = ::open(path.c_str(), flags, 0600);
  if (fd_ < 0) io_fail(path, "cannot open");
}

File::~File() {
  if (fd_ >= 0) ::close(fd_);
}

File::File(File&& other) noexcept
    : fd_(std::exchange(other.fd_, -1)), path_(std::move(other.path_)) {}

File& File::operator=(File&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = std::exchange(other.fd_, -1);
    path_ = std::move(other.path_);
  }
  return *this;
}

std::uint64_t File::size() const {
  struct stat st {};
  if (::fstat(fd_, &st) != 0) io_fail(path_, "cannot stat");
  return static_cast<std::uint64_t>(st.st_size);
}

void File::read_at(std::uint64_t offset, std::span<std::uint8_t> out) const {
  std::size_t done = 0;
  while (done < out.size()) {
    auto n = ::pread(fd_, out.data() + done, out.size() - done,
                     static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail(path_, "cannot read");
    }
    if (n == 0) throw Error(ErrorCode::Io, "short read from " + path_.string());
    done += static_cast<std::size_t>(n);
  }
}

void File::write_at(std::uint64_t offset, ByteView data) {
  std::size_t done = 0;
  while (done < data.size()) {
    auto n = ::pwrite(fd_, data.data() + done, data.size() - done,
                      static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail(path_, "cannot write");
    }
    done += static_cast<std::size_t>(n);
  }
}

void File::truncate(std::uint64_t length) {
  if (::ftruncate(fd_, static_cast<off_t>(length)) != 0) io_fail(path_, "cannot truncate");
}

void File::sync() {
  if (::fsync(fd_) != 0) io_fail(path_, "cannot sync");
}

Bytes read_file(const std::filesystem::path& path) {
  File f(path, File::Mode::Read);
  Bytes out(f.size());
  f.read_at(0, out);
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  return to_string(read_file(path));
}

void write_file(const std::filesystem::path& path, ByteView data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    File f(tmp, File::Mode::Create);
    f.truncate(0);
    f.write_at(0, data);
    f.sync();
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace rvtee
