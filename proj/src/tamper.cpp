// SPDX-License-Identifier: Apache-2.0
#include "rvtee/tamper.hpp"

#include <fmt/format.h>

#include "rvtee/error.hpp"
#include "rvtee/file.hpp"

namespace rvtee::tamper {

namespace {

constexpr std::array<std::pair<Kind, std::string_view>, 5> kKinds{{
    {Kind::FlipByte, "flip-byte"},
    {Kind::TruncateLog, "truncate-log"},
    {Kind::DropRecord, "drop-record"},
    {Kind::SwapRecords, "swap-records"},
    {Kind::EditField, "edit-field"},
}};

constexpr std::array<std::pair<Field, std::string_view>, 5> kFields{{
    {Field::LogId, "log_id"},
    {Field::LogOffset, "log_offset"},
    {Field::DataSize, "data_size"},
    {Field::KeyOffset, "key_offset"},
    {Field::Hmac, "hmac"},
}};

std::uint64_t record_count(const std::filesystem::path& seal_log) {
  auto size = std::filesystem::file_size(seal_log);
  return size < seal::kHeaderSize ? 0 : (size - seal::kHeaderSize) / seal::kRecordSize;
}

void check_index(const std::filesystem::path& seal_log, std::uint64_t index) {
  auto n = record_count(seal_log);
  if (index >= n) {
    throw Error(ErrorCode::Config, fmt::format("record {} out of range (store has {})", index, n));
  }
}

Bytes read_record(File& f, std::uint64_t index) {
  Bytes buf(seal::kRecordSize);
  f.read_at(record_position(index), buf);
  return buf;
}

std::uint64_t pick(std::mt19937_64& rng, std::uint64_t bound) {
  return std::uniform_int_distribution<std::uint64_t>(0, bound - 1)(rng);
}

std::size_t field_position(Field field) {
  switch (field) {
    case Field::LogId: return 0;
    case Field::LogOffset: return 8;
    case Field::DataSize: return 16;
    case Field::KeyOffset: return 24;
    case Field::Hmac: return 32;
  }
  return 0;
}

}  // namespace

std::string to_string(Kind kind) {
  for (auto& [k, name] : kKinds) {
    if (k == kind) return std::string(name);
  }
  return "unknown";
}

std::optional<Kind> parse_kind(std::string_view text) {
  for (auto& [k, name] : kKinds) {
    if (name == text) return k;
  }
  return std::nullopt;
}

std::string to_string(Field field) {
  for (auto& [f, name] : kFields) {
    if (f == field) return std::string(name);
  }
  return "unknown";
}

std::optional<Field> parse_field(std::string_view text) {
  for (auto& [f, name] : kFields) {
    if (name == text) return f;
  }
  return std::nullopt;
}

std::uint64_t record_position(std::uint64_t index) {
  return seal::kHeaderSize + index * seal::kRecordSize;
}

void flip_byte(const std::filesystem::path& file, std::uint64_t offset, std::uint8_t mask) {
  if (mask == 0) throw Error(ErrorCode::Config, "flip mask must be nonzero");
  File f(file, File::Mode::ReadWrite);
  if (offset >= f.size()) {
    throw Error(ErrorCode::Config, fmt::format("offset {} past end of {}", offset, file.string()));
  }
  std::uint8_t b = 0;
  f.read_at(offset, {&b, 1});
  b ^= mask;
  f.write_at(offset, {&b, 1});
}

void truncate_file(const std::filesystem::path& file, std::uint64_t new_length) {
  File f(file, File::Mode::ReadWrite);
  if (new_length >= f.size()) {
    throw Error(ErrorCode::Config,
                fmt::format("truncate length {} not below size {}", new_length, f.size()));
  }
  f.truncate(new_length);
}

void drop_record(const std::filesystem::path& seal_log, std::uint64_t index) {
  check_index(seal_log, index);
  auto n = record_count(seal_log);
  File f(seal_log, File::Mode::ReadWrite);
  for (auto i = index + 1; i < n; ++i) f.write_at(record_position(i - 1), read_record(f, i));
  f.truncate(record_position(n - 1));
}

void swap_records(const std::filesystem::path& seal_log, std::uint64_t i, std::uint64_t j) {
  check_index(seal_log, i);
  check_index(seal_log, j);
  if (i == j) throw Error(ErrorCode::Config, "swap needs two distinct records");
  File f(seal_log, File::Mode::ReadWrite);
  auto a = read_record(f, i);
  auto b = read_record(f, j);
  f.write_at(record_position(i), b);
  f.write_at(record_position(j), a);
}

void edit_field(const std::filesystem::path& seal_log, std::uint64_t index, Field field,
                std::uint64_t value) {
  if (field == Field::Hmac) throw Error(ErrorCode::Config, "use edit_hmac for the digest");
  check_index(seal_log, index);
  File f(seal_log, File::Mode::ReadWrite);
  Bytes buf;
  put_u64le(buf, value);
  f.write_at(record_position(index) + field_position(field), buf);
}

void edit_hmac(const std::filesystem::path& seal_log, std::uint64_t index,
               const crypto::Digest& value) {
  check_index(seal_log, index);
  File f(seal_log, File::Mode::ReadWrite);
  f.write_at(record_position(index) + field_position(Field::Hmac), value);
}

std::string apply(const StoreFiles& store, const Request& req, std::mt19937_64& rng) {
  const auto n = record_count(store.seal_log);
  if (n == 0) throw Error(ErrorCode::Config, "store has no sealed records to tamper with");

  auto choose_log = [&]() -> std::pair<std::uint64_t, std::filesystem::path> {
    if (req.log_id) {
      auto it = store.registry.find(*req.log_id);
      if (it == store.registry.end()) {
        throw Error(ErrorCode::Config, fmt::format("log {} not in registry", *req.log_id));
      }
      return *it;
    }
    std::vector<std::pair<std::uint64_t, std::filesystem::path>> nonempty;
    for (auto& [id, path] : store.registry) {
      std::error_code ec;
      if (std::filesystem::file_size(path, ec) > 0 && !ec) nonempty.emplace_back(id, path);
    }
    if (nonempty.empty()) throw Error(ErrorCode::Config, "all logs are empty");
    return nonempty[pick(rng, nonempty.size())];
  };
  auto choose_record = [&](const std::optional<std::uint64_t>& r) {
    auto i = r ? *r : pick(rng, n);
    check_index(store.seal_log, i);
    return i;
  };

  switch (req.kind) {
    case Kind::FlipByte: {
      std::filesystem::path file;
      std::string what;
      if (req.target_seal_log) {
        file = store.seal_log;
        what = "SEAL_log";
      } else {
        auto [id, path] = choose_log();
        file = path;
        what = fmt::format("log {}", id);
      }
      auto size = std::filesystem::file_size(file);
      if (size == 0) throw Error(ErrorCode::Config, what + " is empty");
      auto offset = req.offset ? *req.offset : pick(rng, size);
      auto mask = static_cast<std::uint8_t>(1u << pick(rng, 8));
      flip_byte(file, offset, mask);
      return fmt::format("flip-byte: {} offset {} mask 0x{:02x}", what, offset, mask);
    }
    case Kind::TruncateLog: {
      auto [id, path] = choose_log();
      auto size = std::filesystem::file_size(path);
      if (size == 0) throw Error(ErrorCode::Config, fmt::format("log {} is empty", id));
      auto length = req.length ? *req.length : pick(rng, size);
      truncate_file(path, length);
      return fmt::format("truncate-log: log {} from {} to {} bytes", id, size, length);
    }
    case Kind::DropRecord: {
      auto i = choose_record(req.record);
      drop_record(store.seal_log, i);
      return fmt::format("drop-record: removed record {} of {}", i, n);
    }
    case Kind::SwapRecords: {
      if (n < 2) throw Error(ErrorCode::Config, "swap-records needs at least 2 records");
      auto i = choose_record(req.record);
      std::uint64_t j;
      if (req.record2) {
        j = choose_record(req.record2);
      } else {
        j = pick(rng, n - 1);
        if (j >= i) ++j;
      }
      swap_records(store.seal_log, i, j);
      return fmt::format("swap-records: exchanged records {} and {}", i, j);
    }
    case Kind::EditField: {
      auto i = choose_record(req.record);
      auto field = req.field ? *req.field : kFields[pick(rng, kFields.size())].first;
      File f(store.seal_log, File::Mode::Read);
      auto rec = seal::decode_record(read_record(f, i));
      if (field == Field::Hmac) {
        auto h = rec.hmac;
        auto bit = pick(rng, h.size() * 8);
        h[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        edit_hmac(store.seal_log, i, h);
        return fmt::format("edit-field: record {} hmac bit {} flipped", i, bit);
      }
      std::uint64_t current = 0;
      switch (field) {
        case Field::LogId: current = rec.log_id; break;
        case Field::LogOffset: current = rec.log_offset; break;
        case Field::DataSize: current = rec.data_size; break;
        case Field::KeyOffset: current = rec.key_offset; break;
        case Field::Hmac: break;
      }
      auto value = req.value ? *req.value : current ^ (std::uint64_t{1} << pick(rng, 64));
      if (value == current) throw Error(ErrorCode::Config, "edit-field value equals current value");
      edit_field(store.seal_log, i, field, value);
      return fmt::format("edit-field: record {} {} {} -> {}", i, to_string(field), current, value);
    }
  }
  throw Error(ErrorCode::Config, "unknown tamper kind");
}

}  // namespace rvtee::tamper
