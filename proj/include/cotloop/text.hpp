// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cotloop::text {

// Unicode NFC of a UTF-8 string. Invalid sequences are replaced by U+FFFD.
std::string nfc(std::string_view utf8);

// Trims and collapses every run of Unicode whitespace into one ASCII space.
std::string collapse_whitespace(std::string_view utf8);

// nfc() followed by collapse_whitespace(); the canonical form for hashing.
std::string normalize(std::string_view utf8);

std::u32string to_u32(std::string_view utf8);
std::string to_utf8(std::u32string_view cps);
std::size_t codepoint_count(std::string_view utf8);

bool is_space(char32_t c);
bool is_punct(char32_t c);
char32_t fold_case(char32_t c);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

// 64-bit mix of a byte string, used to derive per-call seeds.
std::uint64_t hash64(std::string_view bytes, std::uint64_t seed = 0);

std::string trim(std::string_view s);

}  // namespace cotloop::text
