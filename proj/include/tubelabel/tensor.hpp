// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_TENSOR_HPP
#define TUBELABEL_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tubelabel/error.hpp"

namespace tubelabel {

/// Sentinel class id for pixels that carry no label.
inline constexpr std::uint16_t kIgnore = 65535;

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major (C-order) array. Rank is dynamic; accessors for rank 2
/// and 3 are provided since every array in the pipeline is one of those.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), values_(shape_volume(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_volume(shape_)) {
      throw Error(ErrorKind::ShapeMismatch, "tensor of shape " + shape_string(shape_) + " given " +
                                                std::to_string(values_.size()) + " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  T& operator()(std::size_t y, std::size_t x) { return values_[y * shape_[1] + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return values_[y * shape_[1] + x]; }

  T& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return values_[(c * shape_[1] + y) * shape_[2] + x];
  }
  const T& operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return values_[(c * shape_[1] + y) * shape_[2] + x];
  }

  /// Contiguous plane `c` of a rank-3 tensor.
  std::span<T> channel(std::size_t c) {
    const std::size_t plane = shape_[1] * shape_[2];
    return std::span<T>(values_).subspan(c * plane, plane);
  }
  std::span<const T> channel(std::size_t c) const {
    const std::size_t plane = shape_[1] * shape_[2];
    return std::span<const T>(values_).subspan(c * plane, plane);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> values_;
};

/// Per-frame class-probability volume, K x H x W.
struct SoftSegMap {
  Tensor<float> data;
  int frame_id = 0;

  std::size_t num_classes() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }

  friend bool operator==(const SoftSegMap&, const SoftSegMap&) = default;
};

/// Hard per-pixel class ids (H x W), kIgnore for unlabeled pixels.
struct LabelMap {
  Tensor<std::uint16_t> data;

  LabelMap() = default;
  explicit LabelMap(Tensor<std::uint16_t> t) : data(std::move(t)) {}
  LabelMap(std::size_t height, std::size_t width, std::uint16_t fill = kIgnore)
      : data(Shape{height, width}, fill) {}

  std::size_t height() const { return data.dim(0); }
  std::size_t width() const { return data.dim(1); }
  std::uint16_t& operator()(std::size_t y, std::size_t x) { return data(y, x); }
  std::uint16_t operator()(std::size_t y, std::size_t x) const { return data(y, x); }

  std::size_t labeled_count() const {
    std::size_t n = 0;
    for (auto v : data.values()) n += (v != kIgnore);
    return n;
  }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

/// RGB frame, 3 x H x W in [0, 1].
struct ImageFrame {
  Tensor<float> data;

  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }

  friend bool operator==(const ImageFrame&, const ImageFrame&) = default;
};

/// Displacement field, 2 x H x W with channel 0 = dx and channel 1 = dy.
///
/// For direction (from_frame, to_frame) the vector at pixel p of `from_frame`
/// points at the location in `to_frame` the pixel came from, so sampling
/// `to_frame` at p + flow(p) aligns it onto `from_frame` (backward warping).
struct FlowField {
  Tensor<float> data;
  int from_frame = 0;
  int to_frame = 0;

  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
  float dx(std::size_t y, std::size_t x) const { return data(0, y, x); }
  float dy(std::size_t y, std::size_t x) const { return data(1, y, x); }

  static FlowField constant(std::size_t height, std::size_t width, float dx, float dy) {
    FlowField f;
    f.data = Tensor<float>(Shape{2, height, width});
    std::fill(f.data.channel(0).begin(), f.data.channel(0).end(), dx);
    std::fill(f.data.channel(1).begin(), f.data.channel(1).end(), dy);
    return f;
  }

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

inline void require_rank(const Shape& shape, std::size_t rank, std::string_view what) {
  if (shape.size() != rank) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": expected rank " + std::to_string(rank) +
                                              ", got shape " + shape_string(shape));
  }
}

inline void require_same_plane(std::size_t h1, std::size_t w1, std::size_t h2, std::size_t w2,
                               std::string_view what) {
  if (h1 != h2 || w1 != w2) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": " + std::to_string(h1) + "x" +
                                              std::to_string(w1) + " vs " + std::to_string(h2) + "x" +
                                              std::to_string(w2));
  }
}

}  // namespace tubelabel

#endif  // TUBELABEL_TENSOR_HPP
