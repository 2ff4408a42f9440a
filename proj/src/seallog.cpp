// SPDX-License-Identifier: Apache-2.0
#include "rvtee/seallog.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <sstream>

#include "rvtee/error.hpp"

namespace rvtee::seal {

namespace {
constexpr char kMagic[4] = {'R', 'V', 'S', '1'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

EncodedRecord encode_record(const SealRecord& record) {
  Bytes buf;
  buf.reserve(kRecordSize);
  put_u64le(buf, record.log_id);
  put_u64le(buf, record.log_offset);
  put_u64le(buf, record.data_size);
  put_u64le(buf, record.key_offset);
  buf.insert(buf.end(), record.hmac.begin(), record.hmac.end());
  EncodedRecord out{};
  std::copy(buf.begin(), buf.end(), out.begin());
  return out;
}

SealRecord decode_record(ByteView bytes) {
  if (bytes.size() != kRecordSize) {
    throw Error(ErrorCode::MalformedRecord,
                "record must be 64 octets, got " + std::to_string(bytes.size()));
  }
  SealRecord r;
  r.log_id = get_u64le(bytes.data());
  r.log_offset = get_u64le(bytes.data() + 8);
  r.data_size = get_u64le(bytes.data() + 16);
  r.key_offset = get_u64le(bytes.data() + 24);
  std::copy(bytes.begin() + 32, bytes.end(), r.hmac.begin());
  return r;
}

Bytes encode_header(const hsm::Geometry& geometry) {
  Bytes out(kMagic, kMagic + 4);
  put_u16le(out, kVersion);
  put_u64le(out, geometry.chunk_size);
  put_u64le(out, geometry.key_length);
  return out;
}

hsm::Geometry decode_header(ByteView bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorCode::MalformedHeader, "not an RVS1 seal log");
  }
  if (get_u16le(bytes.data() + 4) != kVersion) {
    throw Error(ErrorCode::MalformedHeader, "unsupported RVS1 version");
  }
  hsm::Geometry g{get_u64le(bytes.data() + 14), get_u64le(bytes.data() + 6)};
  try {
    hsm::validate(g);
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedHeader, e.what());
  }
  return g;
}

// ---------------------------------------------------------------------------

RecordReader::RecordReader(const std::filesystem::path& seal_log)
    : file_(seal_log, File::Mode::Read), size_(file_.size()) {
  std::uint8_t header[kHeaderSize];
  if (size_ < kHeaderSize) throw Error(ErrorCode::MalformedHeader, "seal log shorter than header");
  file_.read_at(0, header);
  geometry_ = decode_header(header);
}

std::optional<SealRecord> RecordReader::next() {
  const std::uint64_t pos = kHeaderSize + index_ * kRecordSize;
  if (pos == size_) return std::nullopt;
  if (size_ - pos < kRecordSize) {
    throw Error(ErrorCode::MalformedRecord,
                "trailing partial record of " + std::to_string(size_ - pos) +
                    " octets after record " + std::to_string(index_));
  }
  EncodedRecord buf;
  file_.read_at(pos, buf);
  ++index_;
  return decode_record(buf);
}

std::vector<SealRecord> iter_records(const std::filesystem::path& seal_log) {
  RecordReader reader(seal_log);
  std::vector<SealRecord> out;
  while (auto r = reader.next()) out.push_back(*r);
  return out;
}

// ---------------------------------------------------------------------------

Registry load_registry(const std::filesystem::path& registry_file) {
  std::istringstream in(read_text_file(registry_file));
  const auto base = registry_file.parent_path();
  Registry reg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    std::uint64_t id = 0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + (tab == std::string::npos ? 0 : tab), id);
    if (tab == std::string::npos || ec != std::errc{} || ptr != line.data() + tab ||
        tab + 1 == line.size()) {
      throw Error(ErrorCode::Config, registry_file.string() + ":" + std::to_string(lineno) +
                                         ": expected log_id<TAB>path");
    }
    std::filesystem::path p = line.substr(tab + 1);
    if (p.is_relative()) p = base / p;
    if (!reg.emplace(id, p).second) {
      throw Error(ErrorCode::Config, "duplicate log_id " + std::to_string(id) + " in registry");
    }
  }
  return reg;
}

void save_registry(const std::filesystem::path& registry_file, const Registry& registry) {
  std::string text;
  const auto base = registry_file.parent_path();
  for (const auto& [id, path] : registry) {
    auto shown = path;
    if (!base.empty() && path.parent_path() == base) shown = path.filename();
    text += std::to_string(id) + "\t" + shown.string() + "\n";
  }
  write_file(registry_file, as_bytes(text));
}

// ---------------------------------------------------------------------------

SealLogStore::SealLogStore(Registry registry, hsm::Hsm& device, Options options)
    : registry_(std::move(registry)), device_(device), options_(options) {
  for (const auto& [id, path] : registry_) {
    LogState st;
    st.file = File(path, File::Mode::Create);
    st.next_offset = st.file.size();
    logs_.emplace(id, std::move(st));
  }
}

std::unique_ptr<SealLogStore> SealLogStore::create(const std::filesystem::path& seal_log,
                                                   Registry registry, hsm::Hsm& device,
                                                   Options options) {
  if (std::filesystem::exists(seal_log)) {
    throw Error(ErrorCode::StorageFailure, "seal log already exists: " + seal_log.string());
  }
  std::unique_ptr<SealLogStore> store(
      new SealLogStore(std::move(registry), device, options));
  store->seal_file_ = File(seal_log, File::Mode::Create);
  store->seal_file_.write_at(0, encode_header(device.geometry()));
  if (options.sync) store->seal_file_.sync();
  for (const auto& [id, st] : store->logs_) {
    if (st.next_offset != 0) store->orphans_.push_back({id, 0, st.next_offset});
  }
  return store;
}

std::unique_ptr<SealLogStore> SealLogStore::open(const std::filesystem::path& seal_log,
                                                 Registry registry, hsm::Hsm& device,
                                                 Options options) {
  RecordReader reader(seal_log);
  if (!(reader.geometry() == device.geometry())) {
    throw Error(ErrorCode::MalformedHeader, "seal log geometry does not match the device");
  }
  std::unique_ptr<SealLogStore> store(
      new SealLogStore(std::move(registry), device, options));

  std::map<std::uint64_t, std::uint64_t> covered;
  try {
    while (auto r = reader.next()) {
      auto& end = covered[r->log_id];
      end = std::max(end, r->log_offset + r->data_size);
    }
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedRecord, std::string("cannot reopen store: ") + e.what());
  }
  store->records_ = reader.records_read();
  store->seal_end_ = kHeaderSize + store->records_ * kRecordSize;
  store->seal_file_ = File(seal_log, File::Mode::ReadWrite);

  for (const auto& [id, st] : store->logs_) {
    auto it = covered.find(id);
    std::uint64_t end = it == covered.end() ? 0 : it->second;
    if (st.next_offset > end) store->orphans_.push_back({id, end, st.next_offset});
  }
  const auto consumed = store->records_ * device.geometry().chunk_size;
  if (device.attested_key_offset() != consumed) {
    store->warnings_.push_back("device key offset " + std::to_string(device.attested_key_offset()) +
                               " does not match " + std::to_string(store->records_) +
                               " sealed records");
  }
  return store;
}

SealRecord SealLogStore::append_sealed(std::uint64_t log_id, ByteView data) {
  std::lock_guard lock(mu_);
  auto it = logs_.find(log_id);
  if (it == logs_.end()) throw Error(ErrorCode::UnknownLog, "log " + std::to_string(log_id) + " is not registered");
  if (data.empty()) throw Error(ErrorCode::EmptyData, "refusing to seal empty data");
  if (device_.exhausted()) throw Error(ErrorCode::KeyExhausted, "keystream exhausted");

  LogState& log = it->second;
  const std::uint64_t offset = log.next_offset;

  auto rollback_log = [&] {
    try {
      log.file.truncate(offset);
    } catch (const Error&) {
      // The orphan bytes are reported on the next open().
    }
  };

  try {
    log.file.write_at(offset, data);
  } catch (const Error& e) {
    rollback_log();
    throw Error(ErrorCode::StorageFailure, e.what());
  }

  hsm::SealTag tag;
  try {
    tag = device_.seal(log_id, offset, data);
  } catch (...) {
    rollback_log();
    throw;
  }

  SealRecord record{log_id, offset, data.size(), tag.key_offset, tag.hmac};
  try {
    seal_file_.write_at(seal_end_, encode_record(record));
    if (options_.sync) {
      log.file.sync();
      seal_file_.sync();
    }
  } catch (const Error& e) {
    try {
      seal_file_.truncate(seal_end_);
    } catch (const Error&) {
    }
    rollback_log();
    throw Error(ErrorCode::StorageFailure, e.what());
  }

  log.next_offset += data.size();
  seal_end_ += kRecordSize;
  ++records_;
  return record;
}

std::uint64_t SealLogStore::next_log_offset(std::uint64_t log_id) const {
  std::lock_guard lock(mu_);
  auto it = logs_.find(log_id);
  if (it == logs_.end()) throw Error(ErrorCode::UnknownLog, "log " + std::to_string(log_id) + " is not registered");
  return it->second.next_offset;
}

std::uint64_t SealLogStore::record_count() const {
  std::lock_guard lock(mu_);
  return records_;
}

}  // namespace rvtee::seal
