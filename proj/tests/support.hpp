// SPDX-License-Identifier: Apache-2.0
// Helpers shared by the unit and acceptance tests.
#pragma once

#include <unistd.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "rvtee/entropy.hpp"
#include "rvtee/hsm.hpp"
#include "rvtee/seallog.hpp"

namespace rvtee::testkit {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("rvtee-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" +
             std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// A provisioned device plus a SEAL_log store over `logs` log files.
struct TestStore {
  TempDir dir;
  std::filesystem::path seal_log;
  std::filesystem::path device_file;
  seal::Registry registry;
  std::optional<hsm::SafeCopy> safe_copy;
  std::unique_ptr<hsm::Hsm> device;
  std::unique_ptr<seal::SealLogStore> store;

  TestStore(hsm::Geometry geometry, std::uint64_t seed, std::size_t logs = 2) {
    seal_log = dir / "seal.log";
    device_file = dir / "hsm.dev";
    for (std::size_t i = 1; i <= logs; ++i) {
      registry[i] = dir / ("log" + std::to_string(i) + ".log");
    }
    auto p = hsm::Hsm::provision(std::make_unique<SeededEntropy>(seed), geometry, device_file);
    device = std::move(p.device);
    safe_copy = std::move(p.safe_copy);
    store = seal::SealLogStore::create(seal_log, registry, *device);
  }
};

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

}  // namespace rvtee::testkit
