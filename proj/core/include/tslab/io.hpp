#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tslab {

// File or stream level failure (missing file, short read, rename failure).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Well-formed I/O but malformed content (bad magic, bad record size, bad config).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest round-trip decimal text, '.' separator regardless of locale.
std::string format_double(double v);
std::string format_float(float v);

std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

// Write-temp-then-rename so partially written artifacts are never observed.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);
void atomic_write_file(const std::filesystem::path& path, std::span<const std::uint8_t> content);

}  // namespace tslab
