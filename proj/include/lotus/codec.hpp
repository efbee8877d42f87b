#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace lotus {

using Bytes = std::string;

std::string base64_encode(std::string_view bytes);
/// Strict standard-alphabet decoding with padding; nullopt on any violation.
std::optional<Bytes> base64_decode(std::string_view text);

std::array<std::uint8_t, 32> sha256(std::string_view bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);

}  // namespace lotus
