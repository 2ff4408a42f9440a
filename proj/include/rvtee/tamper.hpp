// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "rvtee/seallog.hpp"

namespace rvtee::tamper {

/// Adversary actions against a sealed store, for drills and tests.
enum class Kind { FlipByte, TruncateLog, DropRecord, SwapRecords, EditField };

std::string to_string(Kind kind);
/// "flip-byte", "truncate-log", "drop-record", "swap-records", "edit-field".
std::optional<Kind> parse_kind(std::string_view text);

enum class Field { LogId, LogOffset, DataSize, KeyOffset, Hmac };

std::string to_string(Field field);
/// "log_id", "log_offset", "data_size", "key_offset", "hmac".
std::optional<Field> parse_field(std::string_view text);

/// XORs one byte of a file with mask (mask must be nonzero).
void flip_byte(const std::filesystem::path& file, std::uint64_t offset, std::uint8_t mask = 0x01);
/// Shortens a file; new_length must be below the current length.
void truncate_file(const std::filesystem::path& file, std::uint64_t new_length);
/// Removes record `index` from a SEAL_log, shifting later records up.
void drop_record(const std::filesystem::path& seal_log, std::uint64_t index);
/// Exchanges records i and j (i != j).
void swap_records(const std::filesystem::path& seal_log, std::uint64_t i, std::uint64_t j);
/// Overwrites one integer field of record `index`.
void edit_field(const std::filesystem::path& seal_log, std::uint64_t index, Field field,
                std::uint64_t value);
/// Overwrites the digest of record `index`.
void edit_hmac(const std::filesystem::path& seal_log, std::uint64_t index,
               const crypto::Digest& value);
/// Byte offset of record `index` in a SEAL_log.
std::uint64_t record_position(std::uint64_t index);

struct StoreFiles {
  std::filesystem::path seal_log;
  seal::Registry registry;
};

struct Request {
  Kind kind = Kind::FlipByte;
  // Any unset parameter is drawn from rng over the valid range.
  std::optional<std::uint64_t> log_id;    // flip-byte (log target), truncate-log
  bool target_seal_log = false;           // flip-byte
  std::optional<std::uint64_t> offset;    // flip-byte
  std::optional<std::uint64_t> record;    // drop-record, swap-records, edit-field
  std::optional<std::uint64_t> record2;   // swap-records
  std::optional<std::uint64_t> length;    // truncate-log
  std::optional<Field> field;             // edit-field
  std::optional<std::uint64_t> value;     // edit-field
};

/// Applies one mutation and returns a one-line description. Throws
/// Error(Config) when the store has no sealed records or a parameter is out of
/// range.
std::string apply(const StoreFiles& store, const Request& request, std::mt19937_64& rng);

}  // namespace rvtee::tamper
