#include "bevtrack/fileio.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "bevtrack/error.hpp"

namespace bevtrack {

namespace fs = std::filesystem;

AtomicFile::AtomicFile(fs::path target) : target_(std::move(target)) {
  static std::atomic<unsigned> counter{0};
  const auto dir = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
  if (!fs::is_directory(dir)) throw IoError("output directory does not exist: " + dir.string());
  temp_ = dir / ("." + target_.filename().string() + ".tmp" + std::to_string(::getpid()) + "_" +
                 std::to_string(counter++));
}

AtomicFile::~AtomicFile() {
  if (!committed_) {
    std::error_code ec;
    fs::remove(temp_, ec);
  }
}

void AtomicFile::commit() {
  std::error_code ec;
  fs::rename(temp_, target_, ec);
  if (ec) throw IoError("cannot move " + temp_.string() + " to " + target_.string() + ": " + ec.message());
  committed_ = true;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
  AtomicFile out(path);
  {
    std::ofstream os(out.temp_path(), std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << content;
    if (!os) throw IoError("write failed: " + path.string());
  }
  out.commit();
}

}  // namespace bevtrack
