// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "rvtee/bytes.hpp"

namespace rvtee::crypto {

inline constexpr std::size_t kDigestSize = 32;
using Digest = std::array<std::uint8_t, kDigestSize>;

Digest hmac_sha256(ByteView key, ByteView message);

/// Constant-time comparison of two digests.
bool digest_equal(const Digest& a, const Digest& b) noexcept;

/// Overwrites memory in a way the optimizer may not elide.
void secure_wipe(std::span<std::uint8_t> buf) noexcept;

/// Fills buf from the OS CSPRNG. Throws Error(Io) if the generator fails.
void system_random(std::span<std::uint8_t> buf);

std::string base64_encode(ByteView data);
/// Strict RFC 4648 decoding (padding required, no whitespace). nullopt on any defect.
std::optional<Bytes> base64_decode(std::string_view text);

}  // namespace rvtee::crypto
