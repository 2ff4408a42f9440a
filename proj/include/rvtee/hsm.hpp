// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>

#include "rvtee/bytes.hpp"
#include "rvtee/crypto.hpp"
#include "rvtee/entropy.hpp"
#include "rvtee/file.hpp"

namespace rvtee::hsm {

inline constexpr std::uint64_t kDefaultChunkSize = 32;
inline constexpr std::uint64_t kDefaultKeyLength = 2 * 1024 * 1024;

struct Geometry {
  std::uint64_t key_length = kDefaultKeyLength;
  std::uint64_t chunk_size = kDefaultChunkSize;

  std::uint64_t chunks() const { return chunk_size == 0 ? 0 : key_length / chunk_size; }
  friend bool operator==(const Geometry&, const Geometry&) = default;
};

/// Throws Error(InvalidGeometry) unless key_length is a positive multiple of a
/// positive chunk_size.
void validate(const Geometry& g);

/// Pristine keystream held by the forensic node. Immutable once built.
class SafeCopy {
 public:
  SafeCopy(Geometry geometry, Bytes key);

  const Geometry& geometry() const noexcept { return geometry_; }
  ByteView bytes() const noexcept { return key_; }
  /// The chunk starting at key_offset. Throws Error(OutOfRange) when the offset
  /// is not chunk-aligned or the chunk does not fit inside the keystream.
  ByteView chunk_at(std::uint64_t key_offset) const;

  /// RVK1 file image: "RVK1", u16 version, u64 chunk_size, u64 key_length, key.
  Bytes serialize() const;
  static SafeCopy parse(ByteView image);
  void save(const std::filesystem::path& path) const;
  static SafeCopy load(const std::filesystem::path& path);

 private:
  Geometry geometry_;
  Bytes key_;
};

struct SealTag {
  std::uint64_t key_offset = 0;
  crypto::Digest hmac{};
};

/// MAC input: log_id, log_offset, data_size, key_offset as u64 LE, then data.
Bytes mac_message(std::uint64_t log_id, std::uint64_t log_offset, std::uint64_t data_size,
                  std::uint64_t key_offset, ByteView data);

crypto::Digest seal_mac(ByteView chunk, std::uint64_t log_id, std::uint64_t log_offset,
                        std::uint64_t data_size, std::uint64_t key_offset, ByteView data);

class Hsm;

struct Provisioned {
  std::unique_ptr<Hsm> device;
  SafeCopy safe_copy;
};

/// Simulated hardware security module. The keystream never leaves the device
/// after provisioning; each seal consumes and burns exactly one chunk.
///
/// Requests are serialized internally. When a device file is attached, every
/// burn and offset update is written to it before seal() returns.
class Hsm {
 public:
  /// Generates a fresh keystream from entropy. With device_file set the device
  /// state is persisted there (overwriting any previous file).
  static Provisioned provision(std::unique_ptr<EntropySource> entropy, Geometry geometry,
                               const std::optional<std::filesystem::path>& device_file = {});

  /// Re-attaches to a device file written by provision().
  static std::unique_ptr<Hsm> open(const std::filesystem::path& device_file,
                                   std::unique_ptr<EntropySource> entropy);

  Hsm(const Hsm&) = delete;
  Hsm& operator=(const Hsm&) = delete;
  ~Hsm();

  /// Throws Error(EmptyData) or Error(KeyExhausted); a failed call burns nothing.
  SealTag seal(std::uint64_t log_id, std::uint64_t log_offset, ByteView data);

  std::uint64_t attested_key_offset() const;
  /// Throws Error(OutOfRange) unless 0 < length and offset + length <= key_length.
  bool is_burned(std::uint64_t offset, std::uint64_t length) const;
  bool exhausted() const;
  std::uint64_t remaining_seals() const;
  Geometry geometry() const noexcept { return geometry_; }

 private:
  Hsm(std::unique_ptr<EntropySource> entropy, Geometry geometry, Bytes keystream,
      std::uint64_t key_offset, std::optional<File> backing);

  void persist_all();
  void persist_burn(std::uint64_t chunk_offset);

  mutable std::mutex mu_;
  std::unique_ptr<EntropySource> entropy_;
  Geometry geometry_;
  Bytes keystream_;
  // Equal to the burned prefix length whenever mu_ is not held.
  std::uint64_t key_offset_ = 0;
  std::optional<File> backing_;
};

/// Reads the key offset stored in a device file without attaching to it.
std::uint64_t read_device_key_offset(const std::filesystem::path& device_file);

}  // namespace rvtee::hsm
