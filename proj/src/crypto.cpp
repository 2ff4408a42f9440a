// SPDX-License-Identifier: Apache-2.0
#include "rvtee/crypto.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>

#include <climits>

#include "rvtee/entropy.hpp"
#include "rvtee/error.hpp"

namespace rvtee::crypto {

Digest hmac_sha256(ByteView key, ByteView message) {
  Digest out{};
  unsigned int len = 0;
  // HMAC() with a null key pointer is rejected by some OpenSSL builds.
  static const std::uint8_t kEmpty = 0;
  const auto* key_ptr = key.empty() ? &kEmpty : key.data();
  if (key.size() > static_cast<std::size_t>(INT_MAX) ||
      HMAC(EVP_sha256(), key_ptr, static_cast<int>(key.size()), message.data(),
           message.size(), out.data(), &len) == nullptr ||
      len != kDigestSize) {
    throw Error(ErrorCode::Io, "HMAC-SHA-256 computation failed");
  }
  return out;
}

bool digest_equal(const Digest& a, const Digest& b) noexcept {
  return CRYPTO_memcmp(a.data(), b.data(), kDigestSize) == 0;
}

void secure_wipe(std::span<std::uint8_t> buf) noexcept {
  if (!buf.empty()) OPENSSL_cleanse(buf.data(), buf.size());
}

void system_random(std::span<std::uint8_t> buf) {
  constexpr std::size_t kMaxRequest = 1 << 20;
  for (std::size_t off = 0; off < buf.size(); off += kMaxRequest) {
    auto n = std::min(kMaxRequest, buf.size() - off);
    if (RAND_bytes(buf.data() + off, static_cast<int>(n)) != 1) {
      throw Error(ErrorCode::Io, "system random generator failed");
    }
  }
}

std::string base64_encode(ByteView data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  if (data.empty()) return out;
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                          static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::optional<Bytes> base64_decode(std::string_view text) {
  if (text.empty()) return Bytes{};
  if (text.size() % 4 != 0) return std::nullopt;
  // EVP_DecodeBlock tolerates whitespace and misplaced padding; validate first.
  std::size_t pad = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    bool alnum = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
    if (alnum || c == '+' || c == '/') {
      if (pad != 0) return std::nullopt;
    } else if (c == '=') {
      if (i + 2 < text.size()) return std::nullopt;
      ++pad;
    } else {
      return std::nullopt;
    }
  }
  Bytes out(text.size() / 4 * 3);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0) return std::nullopt;
  out.resize(static_cast<std::size_t>(n) - pad);
  // Reject non-canonical encodings whose discarded bits are non-zero.
  if (base64_encode(out) != text) return std::nullopt;
  return out;
}

}  // namespace rvtee::crypto

namespace rvtee {

void SystemEntropy::fill(std::span<std::uint8_t> out) { crypto::system_random(out); }

void SeededEntropy::fill(std::span<std::uint8_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    auto word = engine_();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
      out[i] = static_cast<std::uint8_t>(word >> (8 * b));
    }
  }
}

std::unique_ptr<EntropySource> make_system_entropy() {
  return std::make_unique<SystemEntropy>();
}

}  // namespace rvtee
