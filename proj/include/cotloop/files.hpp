// Copyright 2026 The cotloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cotloop::files {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string read_text(const fs::path& path);

// Writes via a sibling temp file and rename(2), so readers never observe a
// partially written file.
void write_atomic(const fs::path& path, std::string_view contents);

json read_json(const fs::path& path);
void write_json_atomic(const fs::path& path, const json& value);

std::vector<json> read_jsonl(const fs::path& path);
std::string to_jsonl(const std::vector<json>& rows);

// Appends one line and flushes; used for audit logs.
void append_line(const fs::path& path, std::string_view line);

// Advisory exclusive lock held for the lifetime of the object.
class LockFile {
 public:
  explicit LockFile(const fs::path& path);
  ~LockFile();
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace cotloop::files
