#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace kverb {

/// Whole file as bytes. Throws Error when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes through a sibling temporary file and a rename, creating parent
/// directories as needed.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace kverb
