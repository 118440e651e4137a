#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sceneqa::io {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Parses each non-blank line as a JSON object. Throws SchemaError naming the
// 1-based line number on malformed input, IoError if the file is unreadable.
std::vector<json> read_jsonl(const std::filesystem::path& path);

// Visits each non-blank line with its 1-based line number.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, size_t)>& visit);

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

// RFC 4180 rows: quoted fields may contain separators, quotes ("") and newlines.
std::vector<std::vector<std::string>> parse_delimited(std::string_view data, char sep);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

uint64_t fnv1a64(std::string_view data, uint64_t basis = 0xcbf29ce484222325ULL);

// Fisher-Yates over a seeded mt19937_64 with rejection sampling, so the
// permutation is identical across standard libraries.
class SeededShuffler {
 public:
  explicit SeededShuffler(uint64_t seed);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Uniform in [0, bound).
  uint64_t below(uint64_t bound);

 private:
  std::mt19937_64 engine_;
};

}  // namespace sceneqa::io
