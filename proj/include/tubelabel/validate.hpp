// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_VALIDATE_HPP
#define TUBELABEL_VALIDATE_HPP

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>

#include "tubelabel/tensor.hpp"

namespace tubelabel {

inline constexpr double kProbabilitySumTolerance = 1e-3;

struct Diagnostics {
  std::size_t y = 0;
  std::size_t x = 0;
  std::string reason;

  std::string message() const {
    std::ostringstream out;
    out << "pixel (y=" << y << ", x=" << x << "): " << reason;
    return out.str();
  }
};

/// Empty on success, otherwise the first offending pixel in scan order.
using Validation = std::optional<Diagnostics>;

inline Validation validate_softseg(const SoftSegMap& m) {
  if (m.data.rank() != 3) return Diagnostics{0, 0, "rank " + std::to_string(m.data.rank()) + ", expected 3"};
  const std::size_t k = m.num_classes(), h = m.height(), w = m.width();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const float v = m.data(c, y, x);
        if (!std::isfinite(v)) return Diagnostics{y, x, "non-finite value in class " + std::to_string(c)};
        if (v < 0.0f || v > 1.0f) {
          return Diagnostics{y, x, "value " + std::to_string(v) + " outside [0,1] in class " + std::to_string(c)};
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > kProbabilitySumTolerance) {
        return Diagnostics{y, x, "class probabilities sum to " + std::to_string(sum)};
      }
    }
  }
  return std::nullopt;
}

inline Validation validate_labels(const LabelMap& m, std::size_t num_classes) {
  for (std::size_t y = 0; y < m.height(); ++y) {
    for (std::size_t x = 0; x < m.width(); ++x) {
      const auto v = m(y, x);
      if (v != kIgnore && v >= num_classes) {
        return Diagnostics{y, x, "class id " + std::to_string(v) + " >= K=" + std::to_string(num_classes)};
      }
    }
  }
  return std::nullopt;
}

inline Validation validate_image(const ImageFrame& img) {
  if (img.data.rank() != 3 || img.data.dim(0) != 3) return Diagnostics{0, 0, "image must be 3 x H x W"};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < img.height(); ++y) {
      for (std::size_t x = 0; x < img.width(); ++x) {
        const float v = img.data(c, y, x);
        if (!(v >= 0.0f && v <= 1.0f)) return Diagnostics{y, x, "intensity " + std::to_string(v) + " outside [0,1]"};
      }
    }
  }
  return std::nullopt;
}

inline Validation validate_flow(const FlowField& f) {
  if (f.data.rank() != 3 || f.data.dim(0) != 2) return Diagnostics{0, 0, "flow must be 2 x H x W"};
  for (std::size_t y = 0; y < f.height(); ++y) {
    for (std::size_t x = 0; x < f.width(); ++x) {
      if (!std::isfinite(f.dx(y, x)) || !std::isfinite(f.dy(y, x))) return Diagnostics{y, x, "non-finite flow"};
    }
  }
  return std::nullopt;
}

}  // namespace tubelabel

#endif  // TUBELABEL_VALIDATE_HPP
