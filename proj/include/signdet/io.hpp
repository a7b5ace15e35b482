#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace signdet::io {

/// Throws std::runtime_error when the file cannot be opened.
std::string read_text(const std::filesystem::path &file);

/// Writes to a sibling temp file and renames it over `file`, so readers see
/// either the old content or the new one, never a prefix.
void write_atomic(const std::filesystem::path &file, std::string_view content);

/// Regular files in `dir` whose lowercase extension is in `extensions`,
/// sorted by filename. Non-recursive.
std::vector<std::filesystem::path>
list_files(const std::filesystem::path &dir,
           const std::vector<std::string> &extensions);

const std::vector<std::string> &image_extensions();

/// The YOLO convention: the last `images` path component becomes `labels`.
/// Directories without one keep labels next to the images.
std::filesystem::path label_dir_for(const std::filesystem::path &image_dir);

} // namespace signdet::io
