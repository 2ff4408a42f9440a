// SPDX-License-Identifier: Apache-2.0
#include "rvtee/hsm.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "rvtee/error.hpp"

namespace rvtee::hsm {

namespace {

constexpr char kSafeCopyMagic[4] = {'R', 'V', 'K', '1'};
constexpr char kDeviceMagic[4] = {'R', 'V', 'H', '1'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kSafeCopyHeader = 4 + 2 + 8 + 8;
constexpr std::size_t kDeviceHeader = 4 + 2 + 8 + 8 + 8;
constexpr std::uint64_t kDeviceOffsetField = 4 + 2 + 8 + 8;

Bytes device_header(const Geometry& g, std::uint64_t key_offset) {
  Bytes out(kDeviceMagic, kDeviceMagic + 4);
  put_u16le(out, kVersion);
  put_u64le(out, g.chunk_size);
  put_u64le(out, g.key_length);
  put_u64le(out, key_offset);
  return out;
}

struct DeviceHeader {
  Geometry geometry;
  std::uint64_t key_offset;
};

DeviceHeader parse_device_header(const File& f) {
  if (f.size() < kDeviceHeader) throw Error(ErrorCode::MalformedHeader, "device file too short");
  std::uint8_t h[kDeviceHeader];
  f.read_at(0, h);
  if (std::memcmp(h, kDeviceMagic, 4) != 0 || get_u16le(h + 4) != kVersion) {
    throw Error(ErrorCode::MalformedHeader, "not an RVH1 device file");
  }
  DeviceHeader out{{get_u64le(h + 14), get_u64le(h + 6)}, get_u64le(h + 22)};
  validate(out.geometry);
  if (f.size() != kDeviceHeader + out.geometry.key_length ||
      out.key_offset % out.geometry.chunk_size != 0 ||
      out.key_offset > out.geometry.key_length) {
    throw Error(ErrorCode::MalformedHeader, "device file inconsistent with its header");
  }
  return out;
}

}  // namespace

void validate(const Geometry& g) {
  if (g.key_length == 0 || g.chunk_size == 0 || g.key_length % g.chunk_size != 0) {
    throw Error(ErrorCode::InvalidGeometry,
                "key_length " + std::to_string(g.key_length) +
                    " is not a positive multiple of chunk_size " + std::to_string(g.chunk_size));
  }
}

// ---------------------------------------------------------------------------
// SafeCopy

SafeCopy::SafeCopy(Geometry geometry, Bytes key) : geometry_(geometry), key_(std::move(key)) {
  validate(geometry_);
  if (key_.size() != geometry_.key_length) {
    throw Error(ErrorCode::InvalidGeometry, "key bytes do not match key_length");
  }
}

ByteView SafeCopy::chunk_at(std::uint64_t key_offset) const {
  if (key_offset % geometry_.chunk_size != 0 || key_offset > geometry_.key_length ||
      geometry_.key_length - key_offset < geometry_.chunk_size) {
    throw Error(ErrorCode::OutOfRange, "key offset " + std::to_string(key_offset) +
                                           " does not address a chunk");
  }
  return ByteView(key_).subspan(key_offset, geometry_.chunk_size);
}

Bytes SafeCopy::serialize() const {
  Bytes out(kSafeCopyMagic, kSafeCopyMagic + 4);
  put_u16le(out, kVersion);
  put_u64le(out, geometry_.chunk_size);
  put_u64le(out, geometry_.key_length);
  out.insert(out.end(), key_.begin(), key_.end());
  return out;
}

SafeCopy SafeCopy::parse(ByteView image) {
  if (image.size() < kSafeCopyHeader || std::memcmp(image.data(), kSafeCopyMagic, 4) != 0) {
    throw Error(ErrorCode::MalformedHeader, "not an RVK1 keystream file");
  }
  if (get_u16le(image.data() + 4) != kVersion) {
    throw Error(ErrorCode::MalformedHeader, "unsupported RVK1 version");
  }
  Geometry g{get_u64le(image.data() + 14), get_u64le(image.data() + 6)};
  validate(g);
  if (image.size() - kSafeCopyHeader != g.key_length) {
    throw Error(ErrorCode::MalformedHeader, "RVK1 key length does not match header");
  }
  return SafeCopy(g, Bytes(image.begin() + kSafeCopyHeader, image.end()));
}

void SafeCopy::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

SafeCopy SafeCopy::load(const std::filesystem::path& path) { return parse(read_file(path)); }

// ---------------------------------------------------------------------------
// MAC

Bytes mac_message(std::uint64_t log_id, std::uint64_t log_offset, std::uint64_t data_size,
                  std::uint64_t key_offset, ByteView data) {
  Bytes msg;
  msg.reserve(32 + data.size());
  put_u64le(msg, log_id);
  put_u64le(msg, log_offset);
  put_u64le(msg, data_size);
  put_u64le(msg, key_offset);
  msg.insert(msg.end(), data.begin(), data.end());
  return msg;
}

crypto::Digest seal_mac(ByteView chunk, std::uint64_t log_id, std::uint64_t log_offset,
                        std::uint64_t data_size, std::uint64_t key_offset, ByteView data) {
  return crypto::hmac_sha256(chunk, mac_message(log_id, log_offset, data_size, key_offset, data));
}

// ---------------------------------------------------------------------------
// Hsm

Hsm::Hsm(std::unique_ptr<EntropySource> entropy, Geometry geometry, Bytes keystream,
         std::uint64_t key_offset, std::optional<File> backing)
    : entropy_(std::move(entropy)),
      geometry_(geometry),
      keystream_(std::move(keystream)),
      key_offset_(key_offset),
      backing_(std::move(backing)) {}

Hsm::~Hsm() { crypto::secure_wipe(keystream_); }

Provisioned Hsm::provision(std::unique_ptr<EntropySource> entropy, Geometry geometry,
                           const std::optional<std::filesystem::path>& device_file) {
  validate(geometry);
  if (!entropy) throw Error(ErrorCode::Config, "provision requires an entropy source");
  Bytes key(geometry.key_length);
  entropy->fill(key);
  SafeCopy safe(geometry, key);

  std::optional<File> backing;
  if (device_file) {
    backing.emplace(*device_file, File::Mode::Create);
    backing->truncate(0);
  }
  std::unique_ptr<Hsm> device(
      new Hsm(std::move(entropy), geometry, std::move(key), 0, std::move(backing)));
  device->persist_all();
  return {std::move(device), std::move(safe)};
}

std::unique_ptr<Hsm> Hsm::open(const std::filesystem::path& device_file,
                               std::unique_ptr<EntropySource> entropy) {
  File f(device_file, File::Mode::ReadWrite);
  auto header = parse_device_header(f);
  Bytes key(header.geometry.key_length);
  f.read_at(kDeviceHeader, key);
  return std::unique_ptr<Hsm>(new Hsm(std::move(entropy), header.geometry, std::move(key),
                                      header.key_offset, std::move(f)));
}

void Hsm::persist_all() {
  if (!backing_) return;
  backing_->write_at(0, device_header(geometry_, key_offset_));
  backing_->write_at(kDeviceHeader, keystream_);
}

void Hsm::persist_burn(std::uint64_t chunk_offset) {
  if (!backing_) return;
  ByteView burned = ByteView(keystream_).subspan(chunk_offset, geometry_.chunk_size);
  backing_->write_at(kDeviceHeader + chunk_offset, burned);
  Bytes off;
  put_u64le(off, key_offset_);
  backing_->write_at(kDeviceOffsetField, off);
}

SealTag Hsm::seal(std::uint64_t log_id, std::uint64_t log_offset, ByteView data) {
  std::lock_guard lock(mu_);
  if (data.empty()) throw Error(ErrorCode::EmptyData, "refusing to seal empty data");
  if (geometry_.key_length - key_offset_ < geometry_.chunk_size) {
    throw Error(ErrorCode::KeyExhausted, "keystream exhausted at offset " +
                                             std::to_string(key_offset_));
  }

  const std::uint64_t chunk_offset = key_offset_;
  std::span<std::uint8_t> region(keystream_.data() + chunk_offset, geometry_.chunk_size);
  Bytes chunk(region.begin(), region.end());
  entropy_->fill(region);
  key_offset_ += geometry_.chunk_size;

  SealTag tag{chunk_offset, {}};
  try {
    persist_burn(chunk_offset);
    tag.hmac = seal_mac(chunk, log_id, log_offset, data.size(), chunk_offset, data);
  } catch (const Error& e) {
    crypto::secure_wipe(chunk);
    throw Error(ErrorCode::StorageFailure, std::string("seal failed after burn: ") + e.what());
  }
  crypto::secure_wipe(chunk);
  return tag;
}

std::uint64_t Hsm::attested_key_offset() const {
  std::lock_guard lock(mu_);
  return key_offset_;
}

bool Hsm::is_burned(std::uint64_t offset, std::uint64_t length) const {
  if (length == 0 || offset > geometry_.key_length || geometry_.key_length - offset < length) {
    throw Error(ErrorCode::OutOfRange, "range outside keystream");
  }
  std::lock_guard lock(mu_);
  return offset + length <= key_offset_;
}

bool Hsm::exhausted() const { return remaining_seals() == 0; }

std::uint64_t Hsm::remaining_seals() const {
  std::lock_guard lock(mu_);
  return (geometry_.key_length - key_offset_) / geometry_.chunk_size;
}

std::uint64_t read_device_key_offset(const std::filesystem::path& device_file) {
  File f(device_file, File::Mode::Read);
  return parse_device_header(f).key_offset;
}

}  // namespace rvtee::hsm
