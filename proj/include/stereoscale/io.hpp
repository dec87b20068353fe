#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace stereoscale
{
std::string read_file(const std::filesystem::path& path);
// Writes to `path.tmp` then renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

// FNV-1a 64-bit, rendered as 16 hex digits. Content hashes in run logs.
std::string content_hash(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);
}
