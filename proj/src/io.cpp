#include "signdet/io.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

namespace signdet::io {

namespace fs = std::filesystem;

std::string read_text(const fs::path &file) {
  std::ifstream in(file, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot read '" + file.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad())
    throw std::runtime_error("error reading '" + file.string() + "'");
  return ss.str();
}

void write_atomic(const fs::path &file, std::string_view content) {
  static std::atomic<unsigned long> counter{0};
  fs::path dir = file.parent_path();
  if (!dir.empty())
    fs::create_directories(dir);
  fs::path tmp = file;
  tmp += ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw std::runtime_error("error writing '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::runtime_error("cannot replace '" + file.string() + "'");
  }
}

std::vector<fs::path> list_files(const fs::path &dir,
                                 const std::vector<std::string> &extensions) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec))
    throw std::runtime_error("not a readable directory: '" + dir.string() + "'");
  std::vector<fs::path> out;
  for (const auto &entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file())
      continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (std::find(extensions.begin(), extensions.end(), ext) != extensions.end())
      out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path &a, const fs::path &b) {
    return a.filename() < b.filename();
  });
  return out;
}

const std::vector<std::string> &image_extensions() {
  static const std::vector<std::string> exts{".jpg", ".jpeg", ".png", ".bmp",
                                             ".gif", ".webp", ".tif", ".tiff"};
  return exts;
}

fs::path label_dir_for(const fs::path &image_dir) {
  std::vector<fs::path> parts(image_dir.begin(), image_dir.end());
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    if (*it == "images") {
      *it = "labels";
      fs::path out;
      for (const auto &p : parts)
        out /= p;
      return out;
    }
  }
  return image_dir;
}

} // namespace signdet::io
