#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hmix {

// Shortest decimal string that parses back to the identical double ("0.1", not "0.10000000000000001").
std::string format_decimal(double value);

// Strict parse of a full decimal string; nullopt on trailing garbage or non-finite values.
std::optional<double> parse_decimal(std::string_view text);
std::optional<std::int64_t> parse_integer(std::string_view text);

std::vector<std::string_view> split(std::string_view text, char delimiter);

// Identifiers used in record files: nonempty, [A-Za-z0-9._:-] only.
bool is_valid_identifier(std::string_view id);

// 64-bit FNV-1a; used for deterministic per-trial seeds and config hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace hmix
