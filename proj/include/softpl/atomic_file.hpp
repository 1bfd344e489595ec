#ifndef SOFTPL_ATOMIC_FILE_HPP
#define SOFTPL_ATOMIC_FILE_HPP

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <system_error>

#include "softpl/errors.hpp"

namespace softpl {

/// Writes `contents` to a sibling temp file and renames it over `path`, so a
/// reader never observes a half-written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw InputError("read failed: " + path.string());
  return data;
}

} // namespace softpl

#endif // SOFTPL_ATOMIC_FILE_HPP
