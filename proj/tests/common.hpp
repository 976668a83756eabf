// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_TESTS_COMMON_HPP
#define TUBELABEL_TESTS_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tubelabel/tensor.hpp"

namespace testing_support {

namespace fs = std::filesystem;
using namespace tubelabel;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "tubelabel") {
    std::random_device rd;
    path_ = fs::temp_directory_path() / (tag + "_" + std::to_string(rd()) + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Softmax of Gaussian logits with scale `sharp`.
inline SoftSegMap random_softseg(Rng& rng, std::size_t k, std::size_t h, std::size_t w, double sharp = 2.0, int frame = 0) {
  SoftSegMap m{Tensor<float>(Shape{k, h, w}), frame};
  std::normal_distribution<double> g(0.0, sharp);
  std::vector<double> e(k);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += (e[c] = std::exp(g(rng)));
      for (std::size_t c = 0; c < k; ++c) m.data(c, y, x) = static_cast<float>(e[c] / s);
    }
  }
  return m;
}

inline SoftSegMap uniform_softseg(std::size_t k, std::size_t h, std::size_t w) {
  return SoftSegMap{Tensor<float>(Shape{k, h, w}, 1.0f / static_cast<float>(k)), 0};
}

inline SoftSegMap one_hot(const LabelMap& labels, std::size_t k) {
  SoftSegMap m{Tensor<float>(Shape{k, labels.height(), labels.width()}), 0};
  for (std::size_t y = 0; y < labels.height(); ++y) {
    for (std::size_t x = 0; x < labels.width(); ++x) {
      if (labels(y, x) != kIgnore) m.data(labels(y, x), y, x) = 1.0f;
    }
  }
  return m;
}

inline LabelMap random_labels(Rng& rng, std::size_t k, std::size_t h, std::size_t w, double ignore_prob = 0.0) {
  LabelMap m(h, w, 0);
  for (auto& v : m.data.values()) {
    v = uniform(rng) < ignore_prob ? kIgnore : static_cast<std::uint16_t>(uniform_int(rng, 0, static_cast<int>(k) - 1));
  }
  return m;
}

inline ImageFrame random_image(Rng& rng, std::size_t h, std::size_t w) {
  ImageFrame img{Tensor<float>(Shape{3, h, w})};
  for (auto& v : img.data.values()) v = static_cast<float>(uniform(rng));
  return img;
}

inline FlowField random_flow(Rng& rng, std::size_t h, std::size_t w, double range = 3.0) {
  FlowField f{Tensor<float>(Shape{2, h, w}), 0, 1};
  for (auto& v : f.data.values()) v = static_cast<float>(uniform(rng, -range, range));
  return f;
}

}  // namespace testing_support

#endif  // TUBELABEL_TESTS_COMMON_HPP
