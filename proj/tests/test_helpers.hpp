#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include <catch_amalgamated.hpp>

#include "mcover/error.hpp"

namespace testing {

// Scratch directory removed at scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mcover_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <typename Fn>
mcover::ErrorKind error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const mcover::Error& e) {
    return e.kind();
  }
  FAIL("expected mcover::Error");
  return mcover::ErrorKind::kInvalidInput;
}

}  // namespace testing
