#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace wmtrig {

// Lowercase hex SHA-256 digests.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

// First eight digest bytes as an integer, for seeded ordering keys.
std::uint64_t sha256_u64(std::string_view text);

}  // namespace wmtrig
