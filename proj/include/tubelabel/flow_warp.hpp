// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_FLOW_WARP_HPP
#define TUBELABEL_FLOW_WARP_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "tubelabel/error.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel {

/// Default occlusion sharpness for RGB in [0, 1].
inline constexpr double kDefaultAlphaOcc = 50.0;
/// Visibility cut on the soft occlusion map.
inline constexpr double kDefaultOcclusionThreshold = 0.7;

struct WarpParams {
  double alpha_occ = kDefaultAlphaOcc;
  double th = kDefaultOcclusionThreshold;
};

template <typename T>
struct Warped {
  Tensor<T> values;                    // C x H x W
  Tensor<std::uint8_t> out_of_bounds;  // H x W, 1 where the sample left the grid
};

struct OcclusionMask {
  Tensor<std::uint8_t> data;           // 1 = visible
  Tensor<float> soft;                  // exp(-alpha * warping error)
  Tensor<std::uint8_t> out_of_bounds;

  std::uint8_t operator()(std::size_t y, std::size_t x) const { return data(y, x); }
};

namespace detail {

inline void check_flow(const Shape& src, const FlowField& flow, std::string_view what) {
  require_rank(flow.data.shape(), 3, "flow");
  if (flow.data.dim(0) != 2) throw Error(ErrorKind::ShapeMismatch, "flow must have 2 channels");
  const std::size_t h = src[src.size() - 2], w = src[src.size() - 1];
  require_same_plane(h, w, flow.height(), flow.width(), what);
}

inline bool sample_in_grid(double sx, double sy, std::size_t h, std::size_t w) {
  return sx >= 0.0 && sy >= 0.0 && sx <= static_cast<double>(w - 1) && sy <= static_cast<double>(h - 1);
}

}  // namespace detail

/// Bilinear backward warp of every channel of `src` (C x H x W): the output
/// at p samples `src` at p + flow(p). Corners that fall off the grid
/// contribute zero.
template <typename T>
Warped<T> warp_bilinear(const Tensor<T>& src, const FlowField& flow) {
  require_rank(src.shape(), 3, "warp source");
  detail::check_flow(src.shape(), flow, "warp");
  const std::size_t c_count = src.dim(0), h = src.dim(1), w = src.dim(2);
  Warped<T> out{Tensor<T>(src.shape()), Tensor<std::uint8_t>(Shape{h, w})};

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = static_cast<double>(x) + flow.dx(y, x);
      const double sy = static_cast<double>(y) + flow.dy(y, x);
      out.out_of_bounds(y, x) = !detail::sample_in_grid(sx, sy, h, w);

      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double ax = sx - fx0, ay = sy - fy0;
      const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
      const long xs[2] = {x0, x0 + 1};
      const long ys[2] = {y0, y0 + 1};
      const double wx[2] = {1.0 - ax, ax};
      const double wy[2] = {1.0 - ay, ay};

      for (std::size_t c = 0; c < c_count; ++c) {
        double acc = 0.0;
        for (int j = 0; j < 2; ++j) {
          if (ys[j] < 0 || ys[j] >= static_cast<long>(h) || wy[j] == 0.0) continue;
          for (int i = 0; i < 2; ++i) {
            if (xs[i] < 0 || xs[i] >= static_cast<long>(w) || wx[i] == 0.0) continue;
            acc += wy[j] * wx[i] * static_cast<double>(src(c, static_cast<std::size_t>(ys[j]), static_cast<std::size_t>(xs[i])));
          }
        }
        out.values(c, y, x) = static_cast<T>(acc);
      }
    }
  }
  return out;
}

struct WarpedSoft {
  SoftSegMap map;
  Tensor<std::uint8_t> out_of_bounds;
};

/// Aligns a neighbor's soft map onto the frame the flow starts from. The
/// result is not renormalized; channel sums may drop below 1 near borders.
inline WarpedSoft warp_soft(const SoftSegMap& src, const FlowField& flow) {
  auto warped = warp_bilinear(src.data, flow);
  return WarpedSoft{SoftSegMap{std::move(warped.values), flow.from_frame}, std::move(warped.out_of_bounds)};
}

/// Nearest-neighbor backward warp of hard labels; samples off the grid
/// become kIgnore.
inline LabelMap warp_labels(const LabelMap& src, const FlowField& flow) {
  require_rank(src.data.shape(), 2, "label warp source");
  detail::check_flow(src.data.shape(), flow, "label warp");
  const std::size_t h = src.height(), w = src.width();
  LabelMap out(h, w, kIgnore);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = std::floor(static_cast<double>(x) + flow.dx(y, x) + 0.5);
      const double sy = std::floor(static_cast<double>(y) + flow.dy(y, x) + 0.5);
      if (sx < 0.0 || sy < 0.0 || sx >= static_cast<double>(w) || sy >= static_cast<double>(h)) continue;
      out(y, x) = src(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
    }
  }
  return out;
}

/// Visibility of `neighbor_img` warped onto `target_img`:
/// soft = exp(-alpha_occ * ||target - warp(neighbor)||_2) with the norm taken
/// per pixel over RGB; a pixel is visible when soft > th and its sample stayed
/// on the grid.
inline OcclusionMask occlusion_mask(const ImageFrame& target_img, const ImageFrame& neighbor_img, const FlowField& flow,
                                    double alpha_occ, double th) {
  if (!(alpha_occ > 0.0)) throw Error(ErrorKind::InvalidConfig, "alpha_occ must be > 0");
  if (!(th > 0.0 && th < 1.0)) throw Error(ErrorKind::InvalidConfig, "occlusion threshold must be in (0, 1)");
  if (target_img.data.shape() != neighbor_img.data.shape()) {
    throw Error(ErrorKind::ShapeMismatch, "occlusion: target " + shape_string(target_img.data.shape()) + " vs neighbor " +
                                              shape_string(neighbor_img.data.shape()));
  }
  const auto warped = warp_bilinear(neighbor_img.data, flow);
  const std::size_t h = target_img.height(), w = target_img.width();
  OcclusionMask mask{Tensor<std::uint8_t>(Shape{h, w}), Tensor<float>(Shape{h, w}), warped.out_of_bounds};
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double sq = 0.0;
      for (std::size_t c = 0; c < target_img.data.dim(0); ++c) {
        const double d = static_cast<double>(target_img.data(c, y, x)) - static_cast<double>(warped.values(c, y, x));
        sq += d * d;
      }
      // Clamped to the smallest normal float so soft stays strictly positive.
      const float soft = std::max(static_cast<float>(std::exp(-alpha_occ * std::sqrt(sq))), std::numeric_limits<float>::min());
      mask.soft(y, x) = soft;
      mask.data(y, x) = static_cast<double>(soft) > th && !warped.out_of_bounds(y, x);
    }
  }
  return mask;
}

}  // namespace tubelabel

#endif  // TUBELABEL_FLOW_WARP_HPP
