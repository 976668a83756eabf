// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_AGGREGATE_HPP
#define TUBELABEL_AGGREGATE_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tubelabel/error.hpp"
#include "tubelabel/flow_warp.hpp"
#include "tubelabel/manifest.hpp"
#include "tubelabel/parallel.hpp"
#include "tubelabel/tensor.hpp"
#include "tubelabel/validate.hpp"

namespace tubelabel {

struct Neighbor {
  const SoftSegMap* pred;
  const ImageFrame* img;
  const FlowField* flow;  // target -> neighbor
};

struct AggregatedFrame {
  SoftSegMap map;
  Tensor<std::uint16_t> support;  // 1 + number of visible neighbors, H x W
};

struct AggregatedClip {
  std::string clip_id;
  std::vector<SoftSegMap> frames;
  std::vector<Tensor<std::uint16_t>> support;
};

/// Averages the target prediction with every neighbor prediction warped onto
/// the target, counting a neighbor at a pixel only where its occlusion mask
/// is 1. Pixels with no visible neighbor copy the target unchanged.
inline AggregatedFrame aggregate_frame(const SoftSegMap& target, const ImageFrame& target_img,
                                       std::span<const Neighbor> neighbors, const WarpParams& params) {
  require_rank(target.data.shape(), 3, "aggregate target");
  const std::size_t k = target.num_classes(), h = target.height(), w = target.width();
  require_same_plane(h, w, target_img.height(), target_img.width(), "aggregate target image");

  struct Prepared {
    WarpedSoft warped;
    OcclusionMask mask;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(neighbors.size());
  for (const auto& n : neighbors) {
    if (n.pred->data.shape() != target.data.shape()) {
      throw Error(ErrorKind::ShapeMismatch, "aggregate: neighbor prediction " + shape_string(n.pred->data.shape()) +
                                                " vs target " + shape_string(target.data.shape()));
    }
    prepared.push_back({warp_soft(*n.pred, *n.flow), occlusion_mask(target_img, *n.img, *n.flow, params.alpha_occ, params.th)});
  }

  AggregatedFrame out{target, Tensor<std::uint16_t>(Shape{h, w}, 1)};
  out.map.frame_id = target.frame_id;
  std::vector<double> acc(k), probs(k);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint16_t support = 1;
      for (std::size_t c = 0; c < k; ++c) acc[c] = target.data(c, y, x);
      for (const auto& p : prepared) {
        if (!p.mask(y, x)) continue;
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          probs[c] = p.warped.map.data(c, y, x);
          sum += probs[c];
        }
        if (sum <= 0.0) continue;
        // Sub-pixel border bleed deflates bilinear samples; restore the simplex.
        const bool renormalize = std::abs(sum - 1.0) > kProbabilitySumTolerance;
        for (std::size_t c = 0; c < k; ++c) acc[c] += renormalize ? probs[c] / sum : probs[c];
        ++support;
      }
      out.support(y, x) = support;
      if (support == 1) continue;
      for (std::size_t c = 0; c < k; ++c) out.map.data(c, y, x) = static_cast<float>(acc[c] / support);
    }
  }
  return out;
}

/// Aggregates every frame of the clip from the original (never previously
/// aggregated) predictions of its +-1 neighbors. End frames use their single
/// neighbor.
inline AggregatedClip aggregate_clip(const ClipData& clip, const WarpParams& params, unsigned workers = 1) {
  const std::size_t n = clip.frames.size();
  AggregatedClip out;
  out.clip_id = clip.clip_id;
  out.frames.resize(n);
  out.support.resize(n);
  parallel_for(n, workers, [&](std::size_t i) {
    const auto& frame = clip.frames[i];
    std::vector<Neighbor> neighbors;
    for (int offset : {-1, +1}) {
      const long j = static_cast<long>(i) + offset;
      if (j < 0 || j >= static_cast<long>(n)) continue;
      const auto it = frame.flows.find(offset);
      if (it == frame.flows.end()) {
        throw Error(ErrorKind::MissingFile, "clip '" + clip.clip_id + "' frame " + std::to_string(i) +
                                                ": no flow for neighbor offset " + std::to_string(offset));
      }
      const auto& nb = clip.frames[static_cast<std::size_t>(j)];
      neighbors.push_back({&nb.pred, &nb.image, &it->second});
    }
    auto agg = aggregate_frame(frame.pred, frame.image, neighbors, params);
    out.frames[i] = std::move(agg.map);
    out.support[i] = std::move(agg.support);
  });
  return out;
}

/// Wraps raw predictions as a clip with no visible neighbors.
inline AggregatedClip unaggregated(const ClipData& clip) {
  AggregatedClip out;
  out.clip_id = clip.clip_id;
  for (const auto& f : clip.frames) {
    out.frames.push_back(f.pred);
    out.support.emplace_back(Shape{f.pred.height(), f.pred.width()}, 1);
  }
  return out;
}

}  // namespace tubelabel

#endif  // TUBELABEL_AGGREGATE_HPP
