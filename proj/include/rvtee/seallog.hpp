// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rvtee/bytes.hpp"
#include "rvtee/crypto.hpp"
#include "rvtee/file.hpp"
#include "rvtee/hsm.hpp"

namespace rvtee::seal {

inline constexpr std::size_t kRecordSize = 64;
inline constexpr std::size_t kHeaderSize = 4 + 2 + 8 + 8;

/// One authentication record (L, L_off, D_sz, K_off, H).
struct SealRecord {
  std::uint64_t log_id = 0;
  std::uint64_t log_offset = 0;
  std::uint64_t data_size = 0;
  std::uint64_t key_offset = 0;
  crypto::Digest hmac{};

  friend bool operator==(const SealRecord&, const SealRecord&) = default;
};

using EncodedRecord = std::array<std::uint8_t, kRecordSize>;

EncodedRecord encode_record(const SealRecord& record);
/// Throws Error(MalformedRecord) unless bytes.size() == kRecordSize.
SealRecord decode_record(ByteView bytes);

/// SEAL_log header: "RVS1", u16 version, u64 chunk_size, u64 key_length.
Bytes encode_header(const hsm::Geometry& geometry);
/// Throws Error(MalformedHeader).
hsm::Geometry decode_header(ByteView bytes);

/// Sequential reader over a SEAL_log file.
class RecordReader {
 public:
  /// Throws Error(MalformedHeader) on a missing or invalid header.
  explicit RecordReader(const std::filesystem::path& seal_log);

  const hsm::Geometry& geometry() const noexcept { return geometry_; }

  /// Next record in file order, nullopt at a clean end. A trailing partial
  /// record throws Error(MalformedRecord) once the full records are consumed.
  std::optional<SealRecord> next();
  std::uint64_t records_read() const noexcept { return index_; }

 private:
  File file_;
  hsm::Geometry geometry_;
  std::uint64_t size_ = 0;
  std::uint64_t index_ = 0;
};

/// All full records of a SEAL_log. Throws like RecordReader.
std::vector<SealRecord> iter_records(const std::filesystem::path& seal_log);

/// Mapping log_id -> log file path.
using Registry = std::map<std::uint64_t, std::filesystem::path>;

/// Text lines "log_id<TAB>path"; relative paths resolve against the registry's
/// directory. Blank lines and '#' comments are ignored. Throws Error(Config).
Registry load_registry(const std::filesystem::path& registry_file);
void save_registry(const std::filesystem::path& registry_file, const Registry& registry);

/// Anything that can seal-append data to a registered log.
class Sealer {
 public:
  virtual ~Sealer() = default;
  virtual SealRecord append_sealed(std::uint64_t log_id, ByteView data) = 0;
};

struct OrphanRegion {
  std::uint64_t log_id = 0;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

/// Single-writer sealed append store over a set of logs and one SEAL_log.
class SealLogStore final : public Sealer {
 public:
  struct Options {
    bool sync = false;  // fsync log and SEAL_log after each append
  };

  /// Writes a fresh SEAL_log header (the file must not exist) and creates
  /// missing log files.
  static std::unique_ptr<SealLogStore> create(const std::filesystem::path& seal_log,
                                              Registry registry, hsm::Hsm& device,
                                              Options options);
  static std::unique_ptr<SealLogStore> create(const std::filesystem::path& seal_log,
                                              Registry registry, hsm::Hsm& device) {
    return create(seal_log, std::move(registry), device, Options{});
  }

  /// Re-opens an existing store. Log bytes past the last sealed coverage are
  /// reported through orphans(); they are never sealed retroactively.
  static std::unique_ptr<SealLogStore> open(const std::filesystem::path& seal_log,
                                            Registry registry, hsm::Hsm& device,
                                            Options options);
  static std::unique_ptr<SealLogStore> open(const std::filesystem::path& seal_log,
                                            Registry registry, hsm::Hsm& device) {
    return open(seal_log, std::move(registry), device, Options{});
  }

  /// Appends data to the log, obtains a seal from the device and appends the
  /// record. Errors: UnknownLog, EmptyData, KeyExhausted, StorageFailure.
  /// On any error no new log bytes or record remain in the files.
  SealRecord append_sealed(std::uint64_t log_id, ByteView data) override;

  std::uint64_t next_log_offset(std::uint64_t log_id) const;
  std::uint64_t record_count() const;
  const std::vector<OrphanRegion>& orphans() const noexcept { return orphans_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }
  const Registry& registry() const noexcept { return registry_; }

 private:
  struct LogState {
    File file;
    std::uint64_t next_offset = 0;
  };

  SealLogStore(Registry registry, hsm::Hsm& device, Options options);

  mutable std::mutex mu_;
  Registry registry_;
  hsm::Hsm& device_;
  Options options_;
  File seal_file_;
  std::uint64_t seal_end_ = kHeaderSize;
  std::uint64_t records_ = 0;
  std::map<std::uint64_t, LogState> logs_;
  std::vector<OrphanRegion> orphans_;
  std::vector<std::string> warnings_;
};

}  // namespace rvtee::seal
