#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include "lrr/dataio.hpp"
#include "lrr/rng.hpp"
#include "lrr/tensor.hpp"

namespace lrr::test {

inline double max_abs_diff(const TensorD& a, const TensorD& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs(const TensorD& a) {
  double m = 0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

inline LabelMap random_binary(std::size_t h, std::size_t w, std::uint64_t seed, double p) {
  LabelMap m(h, w);
  CounterRng rng(seed, 0);
  for (auto& v : m.labels) v = rng.uniform() < p ? 1 : 0;
  return m;
}

/// Class 0 on columns <= c, class 1 to the right.
inline LabelMap vertical_step(std::size_t h, std::size_t w, std::size_t c) {
  LabelMap m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) m.at(y, x) = x <= c ? 0 : 1;
  return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("lrr_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace lrr::test
