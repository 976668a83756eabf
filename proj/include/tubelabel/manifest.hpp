// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_MANIFEST_HPP
#define TUBELABEL_MANIFEST_HPP

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "tubelabel/error.hpp"
#include "tubelabel/npy.hpp"
#include "tubelabel/parallel.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel {

namespace fs = std::filesystem;

struct FrameEntry {
  fs::path image;
  fs::path pred;
  std::map<int, fs::path> flows;  // neighbor offset -> flow (this frame -> frame + offset)
  std::optional<fs::path> gt;
};

/// A clip's frames in temporal order. Paths are absolute after loading.
struct ClipManifest {
  std::string clip_id;
  int num_classes = 0;
  std::vector<FrameEntry> frames;
};

namespace detail {

[[noreturn]] inline void schema_error(const std::string& what) { throw Error(ErrorKind::SchemaError, what); }

inline const nlohmann::json& require_key(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) schema_error(where + ": missing key '" + key + "'");
  return obj.at(key);
}

inline std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where) {
  const auto& v = require_key(obj, key, where);
  if (!v.is_string()) schema_error(where + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

inline int parse_offset(const std::string& key, const std::string& where) {
  std::size_t used = 0;
  int offset = 0;
  try {
    offset = std::stoi(key, &used);
  } catch (const std::exception&) {
    schema_error(where + ": flow key '" + key + "' is not an integer offset");
  }
  if (used != key.size() || offset == 0) schema_error(where + ": flow key '" + key + "' is not a nonzero offset");
  return offset;
}

inline std::string offset_key(int offset) { return offset > 0 ? "+" + std::to_string(offset) : std::to_string(offset); }

inline void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error(ErrorKind::MissingFile, p.string());
}

inline void require_dims(const fs::path& p, const Shape& expected) {
  const auto header = npy::read_header(p);
  if (header.shape != expected) {
    throw Error(ErrorKind::InconsistentDims,
                p.string() + ": shape " + shape_string(header.shape) + ", expected " + shape_string(expected));
  }
}

}  // namespace detail

/// Parses the manifest and checks that every referenced file exists and
/// agrees on K, H and W. Clip order and per-clip frame order follow the file.
inline std::vector<ClipManifest> load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    detail::schema_error(path.string() + ": " + e.what());
  }
  const fs::path base = fs::absolute(path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  const auto& clips_json = detail::require_key(doc, "clips", "manifest");
  if (!clips_json.is_array()) detail::schema_error("manifest: 'clips' must be an array");

  std::vector<ClipManifest> clips;
  for (std::size_t ci = 0; ci < clips_json.size(); ++ci) {
    const auto& cj = clips_json[ci];
    const std::string where = "clips[" + std::to_string(ci) + "]";
    ClipManifest clip;
    clip.clip_id = detail::require_string(cj, "clip_id", where);
    const auto& k = detail::require_key(cj, "num_classes", where);
    if (!k.is_number_integer() || k.get<int>() < 2) detail::schema_error(where + ": 'num_classes' must be an integer >= 2");
    clip.num_classes = k.get<int>();
    const auto& frames = detail::require_key(cj, "frames", where);
    if (!frames.is_array() || frames.empty()) detail::schema_error(where + ": 'frames' must be a nonempty array");

    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
      const auto& fj = frames[fi];
      const std::string fwhere = where + ".frames[" + std::to_string(fi) + "]";
      FrameEntry entry;
      entry.image = resolve(detail::require_string(fj, "image", fwhere));
      entry.pred = resolve(detail::require_string(fj, "pred", fwhere));
      if (fj.contains("flow")) {
        const auto& flows = fj.at("flow");
        if (!flows.is_object()) detail::schema_error(fwhere + ": 'flow' must be an object");
        for (const auto& [key, value] : flows.items()) {
          if (!value.is_string()) detail::schema_error(fwhere + ": flow path must be a string");
          const int offset = detail::parse_offset(key, fwhere);
          const long target = static_cast<long>(fi) + offset;
          if (target < 0 || target >= static_cast<long>(frames.size())) {
            detail::schema_error(fwhere + ": flow offset " + key + " points outside the clip");
          }
          entry.flows[offset] = resolve(value.get<std::string>());
        }
      }
      if (fj.contains("gt") && !fj.at("gt").is_null()) entry.gt = resolve(detail::require_string(fj, "gt", fwhere));
      clip.frames.push_back(std::move(entry));
    }
    clips.push_back(std::move(clip));
  }

  for (const auto& clip : clips) {
    for (const auto& f : clip.frames) {
      detail::require_file(f.image);
      detail::require_file(f.pred);
      for (const auto& [off, p] : f.flows) detail::require_file(p);
      if (f.gt) detail::require_file(*f.gt);
    }
  }

  if (!clips.empty()) {
    const int k = clips.front().num_classes;
    for (const auto& clip : clips) {
      if (clip.num_classes != k) {
        throw Error(ErrorKind::InconsistentDims, "clip '" + clip.clip_id + "' has K=" + std::to_string(clip.num_classes) +
                                                     " but clip '" + clips.front().clip_id + "' has K=" + std::to_string(k));
      }
    }
  }
  for (const auto& clip : clips) {
    const auto first = npy::read_header(clip.frames.front().pred).shape;
    if (first.size() != 3 || first[0] != static_cast<std::size_t>(clip.num_classes)) {
      throw Error(ErrorKind::InconsistentDims, clip.frames.front().pred.string() + ": shape " + shape_string(first) +
                                                   " disagrees with num_classes=" + std::to_string(clip.num_classes));
    }
    const std::size_t h = first[1], w = first[2];
    for (const auto& f : clip.frames) {
      detail::require_dims(f.pred, {static_cast<std::size_t>(clip.num_classes), h, w});
      detail::require_dims(f.image, {3, h, w});
      for (const auto& [off, p] : f.flows) detail::require_dims(p, {2, h, w});
      if (f.gt) detail::require_dims(*f.gt, {h, w});
    }
  }
  return clips;
}

inline nlohmann::json manifest_to_json(const std::vector<ClipManifest>& clips, const fs::path& base) {
  auto rel = [&](const fs::path& p) { return fs::relative(p, base).generic_string(); };
  nlohmann::json doc;
  doc["clips"] = nlohmann::json::array();
  for (const auto& clip : clips) {
    nlohmann::json cj;
    cj["clip_id"] = clip.clip_id;
    cj["num_classes"] = clip.num_classes;
    cj["frames"] = nlohmann::json::array();
    for (const auto& f : clip.frames) {
      nlohmann::json fj;
      fj["image"] = rel(f.image);
      fj["pred"] = rel(f.pred);
      fj["flow"] = nlohmann::json::object();
      for (const auto& [off, p] : f.flows) fj["flow"][detail::offset_key(off)] = rel(p);
      if (f.gt) fj["gt"] = rel(*f.gt);
      cj["frames"].push_back(std::move(fj));
    }
    doc["clips"].push_back(std::move(cj));
  }
  return doc;
}

/// Writes paths relative to the manifest's directory.
inline void save_manifest(const fs::path& path, const std::vector<ClipManifest>& clips) {
  const auto doc = manifest_to_json(clips, fs::absolute(path).parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

// In-memory clip

struct ClipFrame {
  ImageFrame image;
  SoftSegMap pred;
  std::optional<LabelMap> gt;
  std::map<int, FlowField> flows;
};

struct ClipData {
  std::string clip_id;
  int num_classes = 0;
  std::vector<ClipFrame> frames;

  std::size_t height() const { return frames.front().pred.height(); }
  std::size_t width() const { return frames.front().pred.width(); }
};

inline ClipData load_clip(const ClipManifest& manifest, unsigned workers = 1) {
  ClipData clip;
  clip.clip_id = manifest.clip_id;
  clip.num_classes = manifest.num_classes;
  clip.frames.resize(manifest.frames.size());
  parallel_for(manifest.frames.size(), workers, [&](std::size_t i) {
    const auto& entry = manifest.frames[i];
    auto& frame = clip.frames[i];
    const int t = static_cast<int>(i);
    frame.image = npy::load_image(entry.image);
    frame.pred = npy::load_softseg(entry.pred, t);
    if (entry.gt) frame.gt = npy::load_labels(*entry.gt);
    for (const auto& [off, p] : entry.flows) frame.flows.emplace(off, npy::load_flow(p, t, t + off));
  });
  return clip;
}

}  // namespace tubelabel

#endif  // TUBELABEL_MANIFEST_HPP
