// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_REFINE_HPP
#define TUBELABEL_REFINE_HPP

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tubelabel/error.hpp"
#include "tubelabel/flow_warp.hpp"
#include "tubelabel/manifest.hpp"
#include "tubelabel/parallel.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel {

enum class RefineMode { CutOut, FillIn };

inline std::string_view to_string(RefineMode m) { return m == RefineMode::CutOut ? "cutout" : "fillin"; }

inline RefineMode parse_refine_mode(std::string_view name) {
  if (name == "cutout") return RefineMode::CutOut;
  if (name == "fillin") return RefineMode::FillIn;
  throw Error(ErrorKind::InvalidConfig, "unknown refinement mode '" + std::string(name) + "'");
}

namespace detail {

inline void check_refine_inputs(const LabelMap& current, const LabelMap& reference, const OcclusionMask& mask) {
  require_same_plane(current.height(), current.width(), reference.height(), reference.width(), "refine reference");
  require_same_plane(current.height(), current.width(), mask.data.dim(0), mask.data.dim(1), "refine mask");
}

}  // namespace detail

/// Drops labels that disagree with the warped reference label at visible
/// pixels. Where the warped reference is ignored or occluded there is
/// nothing to check and the label is kept, unless `strict` is set, in which
/// case only confirmed labels survive.
inline LabelMap refine_cutout(const LabelMap& current, const LabelMap& reference, const FlowField& flow,
                              const OcclusionMask& mask, bool strict = false) {
  detail::check_refine_inputs(current, reference, mask);
  const LabelMap warped = warp_labels(reference, flow);
  LabelMap out(current.height(), current.width(), kIgnore);
  for (std::size_t y = 0; y < current.height(); ++y) {
    for (std::size_t x = 0; x < current.width(); ++x) {
      const auto label = current(y, x);
      if (label == kIgnore) continue;
      const bool checkable = warped(y, x) != kIgnore && mask(y, x);
      const bool keep = checkable ? warped(y, x) == label : !strict;
      if (keep) out(y, x) = label;
    }
  }
  return out;
}

/// Keeps every existing label and fills ignored pixels from the warped
/// reference where it is visible and labeled.
inline LabelMap refine_fillin(const LabelMap& current, const LabelMap& reference, const FlowField& flow,
                              const OcclusionMask& mask) {
  detail::check_refine_inputs(current, reference, mask);
  const LabelMap warped = warp_labels(reference, flow);
  LabelMap out = current;
  for (std::size_t y = 0; y < current.height(); ++y) {
    for (std::size_t x = 0; x < current.width(); ++x) {
      if (out(y, x) == kIgnore && mask(y, x) && warped(y, x) != kIgnore) out(y, x) = warped(y, x);
    }
  }
  return out;
}

struct RefineParams {
  RefineMode mode = RefineMode::CutOut;
  bool strict_consensus = false;
  int reference_offset = -1;  // reference frame = current + offset
  WarpParams warp;
};

/// Refines every frame of a clip against its reference frame's unrefined
/// labels. Frames without a reference (or without the needed flow) are
/// passed through.
inline std::vector<LabelMap> refine_clip(std::span<const LabelMap> labels, const ClipData& clip,
                                         const RefineParams& params, unsigned workers = 1) {
  if (labels.size() != clip.frames.size()) {
    throw Error(ErrorKind::ShapeMismatch, "refine: " + std::to_string(labels.size()) + " label maps for " +
                                              std::to_string(clip.frames.size()) + " frames");
  }
  if (params.reference_offset == 0) throw Error(ErrorKind::InvalidConfig, "reference offset must be nonzero");
  std::vector<LabelMap> out(labels.size());
  parallel_for(labels.size(), workers, [&](std::size_t i) {
    const long j = static_cast<long>(i) + params.reference_offset;
    const auto& frame = clip.frames[i];
    const auto flow = frame.flows.find(params.reference_offset);
    if (j < 0 || j >= static_cast<long>(labels.size()) || flow == frame.flows.end()) {
      out[i] = labels[i];
      return;
    }
    const auto& ref = clip.frames[static_cast<std::size_t>(j)];
    const auto mask = occlusion_mask(frame.image, ref.image, flow->second, params.warp.alpha_occ, params.warp.th);
    out[i] = params.mode == RefineMode::CutOut
                 ? refine_cutout(labels[i], labels[static_cast<std::size_t>(j)], flow->second, mask, params.strict_consensus)
                 : refine_fillin(labels[i], labels[static_cast<std::size_t>(j)], flow->second, mask);
  });
  return out;
}

}  // namespace tubelabel

#endif  // TUBELABEL_REFINE_HPP
