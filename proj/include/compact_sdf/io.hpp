#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace csdf {

// Writes to a sibling temp file and renames it over `path`, so readers
// never observe a partially written file.
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

}  // namespace csdf
