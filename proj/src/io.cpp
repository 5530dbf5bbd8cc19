// Copyright 2026 The Histograde Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "histograde/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace histograde {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

std::span<const std::uint8_t> verify_sealed(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) fail(ErrorCode::kChecksum, "data too short for checksum");
  const auto payload = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + payload.size(), 4);
  if (stored != crc32(payload)) fail(ErrorCode::kChecksum, "CRC32 mismatch");
  return payload;
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, int)>& fn) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open: " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(
            static_cast<unsigned char>(c)); })) {
      continue;
    }
    Json obj;
    try {
      obj = Json::parse(line);
    } catch (const Json::parse_error& e) {
      fail(ErrorCode::kParse, path.filename().string() + ":" + std::to_string(number) +
                                  ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) {
      fail(ErrorCode::kParse, "line " + std::to_string(number) + ": expected a JSON object");
    }
    fn(obj, number);
  }
}

const Json& json_field(const Json& obj, std::string_view name, int line) {
  const auto it = obj.find(name);
  if (it == obj.end()) {
    fail(ErrorCode::kParse,
         "line " + std::to_string(line) + ": missing field '" + std::string(name) + "'");
  }
  return *it;
}

void json_only_fields(const Json& obj, std::initializer_list<std::string_view> allowed,
                      int line) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorCode::kParse,
           "line " + std::to_string(line) + ": unexpected field '" + key + "'");
    }
  }
}

}  // namespace histograde
