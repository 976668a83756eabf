// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_DATASET_HPP
#define TUBELABEL_DATASET_HPP

#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tubelabel/error.hpp"
#include "tubelabel/manifest.hpp"
#include "tubelabel/npy.hpp"
#include "tubelabel/parallel.hpp"
#include "tubelabel/pseudo.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel {

inline std::string frame_file(std::string_view prefix, std::size_t t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*s_%03zu.npy", static_cast<int>(prefix.size()), prefix.data(), t);
  return buf;
}

inline std::vector<ClipData> load_clips(std::span<const ClipManifest> manifests, unsigned workers = 1) {
  std::vector<ClipData> clips(manifests.size());
  parallel_for(manifests.size(), workers, [&](std::size_t i) { clips[i] = load_clip(manifests[i]); });
  return clips;
}

/// Label maps are stored as `<dir>/<clip_id>/label_<ttt>.npy`.
inline void write_label_dir(const fs::path& dir, std::span<const ClipManifest> manifests,
                            const std::vector<std::vector<LabelMap>>& labels, unsigned workers = 1) {
  if (labels.size() != manifests.size()) throw Error(ErrorKind::ShapeMismatch, "label clips vs manifest clips");
  parallel_for(manifests.size(), workers, [&](std::size_t c) {
    const fs::path clip_dir = dir / manifests[c].clip_id;
    fs::create_directories(clip_dir);
    for (std::size_t t = 0; t < labels[c].size(); ++t) npy::save_array(clip_dir / frame_file("label", t), labels[c][t].data);
  });
}

inline std::vector<std::vector<LabelMap>> read_label_dir(const fs::path& dir, std::span<const ClipManifest> manifests,
                                                         unsigned workers = 1) {
  std::vector<std::vector<LabelMap>> labels(manifests.size());
  parallel_for(manifests.size(), workers, [&](std::size_t c) {
    for (std::size_t t = 0; t < manifests[c].frames.size(); ++t) {
      labels[c].push_back(npy::load_labels(dir / manifests[c].clip_id / frame_file("label", t)));
    }
  });
  return labels;
}

inline LabelMap argmax_labels(const SoftSegMap& m) {
  LabelMap out(m.height(), m.width(), 0);
  for (std::size_t y = 0; y < m.height(); ++y) {
    for (std::size_t x = 0; x < m.width(); ++x) out(y, x) = argmax_at(m, y, x).cls;
  }
  return out;
}

inline std::vector<std::vector<LabelMap>> ground_truth(std::span<const ClipData> clips) {
  std::vector<std::vector<LabelMap>> gts;
  for (const auto& clip : clips) {
    auto& g = gts.emplace_back();
    for (const auto& f : clip.frames) {
      if (!f.gt) throw Error(ErrorKind::MissingFile, "clip '" + clip.clip_id + "' lacks ground truth");
      g.push_back(*f.gt);
    }
  }
  return gts;
}

inline std::vector<std::vector<LabelMap>> prediction_argmax(std::span<const ClipData> clips) {
  std::vector<std::vector<LabelMap>> out;
  for (const auto& clip : clips) {
    auto& p = out.emplace_back();
    for (const auto& f : clip.frames) p.push_back(argmax_labels(f.pred));
  }
  return out;
}

/// Concatenates per-clip frame lists.
inline std::vector<LabelMap> flatten(const std::vector<std::vector<LabelMap>>& clips) {
  std::vector<LabelMap> out;
  for (const auto& c : clips) out.insert(out.end(), c.begin(), c.end());
  return out;
}

}  // namespace tubelabel

#endif  // TUBELABEL_DATASET_HPP
