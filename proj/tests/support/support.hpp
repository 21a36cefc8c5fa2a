#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "workbench/digest.hpp"
#include "workbench/manifest.hpp"

namespace wbt {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "wb") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline wb::SampleRecord record(const std::string& id, int label,
                               wb::Split split = wb::Split::unassigned,
                               wb::Status status = wb::Status::unverified) {
  wb::SampleRecord r;
  r.id = id;
  r.image_path = "images/" + id + ".png";
  const std::vector<std::uint8_t> seed(id.begin(), id.end());
  r.byte_hash = wb::sha256(seed);
  r.label = label;
  r.split = split;
  r.status = status;
  return r;
}

inline wb::DatasetManifest empty_manifest(int classes = 10, long n_max = 10000) {
  wb::DatasetManifest m;
  m.n_max = n_max;
  for (int c = 0; c < classes; ++c) m.classes.push_back("c" + std::to_string(c));
  return m;
}

inline std::string pad(int i, int width = 5) {
  std::string s = std::to_string(i);
  return std::string(width > static_cast<int>(s.size()) ? width - s.size() : 0, '0') + s;
}

}  // namespace wbt
