// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_SYNTH_HPP
#define TUBELABEL_SYNTH_HPP

// Synthetic clips of textured shapes translating over a static textured
// background. Every frame comes with exact labels, exact integer optical flow
// to its neighbors, the analytic visibility of each flow, and "predictions"
// obtained by corrupting the labels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tubelabel/error.hpp"
#include "tubelabel/manifest.hpp"
#include "tubelabel/npy.hpp"
#include "tubelabel/parallel.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel::synth {

struct Noise {
  double label_flip_prob = 0.0;
  double softmax_temperature = 1.0;
  double flicker_prob = 0.0;
  double confidence_jitter = 0.0;  // std of Gaussian logit noise, before the temperature
  int noise_cell = 1;              // flips and jitter are drawn per cell x cell block
};

struct SynthConfig {
  std::uint64_t seed = 0;
  int num_clips = 1;
  int frames_per_clip = 5;
  int height = 32;
  int width = 32;
  int num_classes = 4;
  int shape_count = 3;
  int velocity_range = 2;  // integer pixels per frame, per axis
  Noise noise;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, "synth: " + m); };
    if (num_classes < 2) fail("num_classes must be >= 2");
    if (frames_per_clip < 2) fail("frames_per_clip must be >= 2");
    if (num_clips < 1) fail("num_clips must be >= 1");
    if (height < 4 || width < 4) fail("height and width must be >= 4");
    if (shape_count < 0) fail("shape_count must be >= 0");
    if (velocity_range < 0) fail("velocity_range must be >= 0");
    auto prob = [&](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) fail(std::string(name) + " must be in [0, 1]");
    };
    prob(noise.label_flip_prob, "label_flip_prob");
    prob(noise.flicker_prob, "flicker_prob");
    if (!(noise.softmax_temperature > 0.0)) fail("softmax_temperature must be > 0");
    if (!(noise.confidence_jitter >= 0.0)) fail("confidence_jitter must be >= 0");
    if (noise.noise_cell < 1) fail("noise_cell must be >= 1");
  }
};

struct MovingShape {
  bool disk = false;
  int x = 0, y = 0;           // top-left (rect) or center (disk) at frame 0
  int half_w = 0, half_h = 0; // rect extent, or radius in half_w
  int vx = 0, vy = 0;
  std::uint16_t cls = 0;
  std::array<float, 3> color{};
  std::uint64_t texture_seed = 0;

  bool contains(int px, int py, int t) const {
    const int cx = x + vx * t, cy = y + vy * t;
    if (disk) {
      const int dx = px - cx, dy = py - cy;
      return dx * dx + dy * dy <= half_w * half_w;
    }
    return px >= cx && px < cx + 2 * half_w && py >= cy && py < cy + 2 * half_h;
  }
};

struct SynthClip {
  ClipData data;
  std::vector<MovingShape> shapes;
  /// Topmost layer per pixel: 0 = background, s + 1 = shape s.
  std::vector<Tensor<std::uint16_t>> layers;
  /// Per frame and flow offset: 1 where the flow lands on the same layer.
  std::vector<std::map<int, Tensor<std::uint8_t>>> visible;
  /// [frame][shape] = 1 where the shape's predicted class was swapped.
  std::vector<std::vector<std::uint8_t>> flickered;
};

namespace detail {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double hash_unit(std::uint64_t seed, std::int64_t a, std::int64_t b, std::int64_t c) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ static_cast<std::uint64_t>(a));
  h = splitmix(h ^ static_cast<std::uint64_t>(b));
  h = splitmix(h ^ static_cast<std::uint64_t>(c));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace detail

/// Seed of clip `index`; clips are independent so they can be rendered in
/// any order or in parallel.
inline std::uint64_t clip_seed(std::uint64_t seed, int index) {
  return detail::splitmix(seed ^ detail::splitmix(static_cast<std::uint64_t>(index) + 1));
}

inline std::string clip_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%04d", index);
  return buf;
}

inline SynthClip render_clip(const SynthConfig& cfg, int clip_index) {
  cfg.validate();
  const std::uint64_t seed = clip_seed(cfg.seed, clip_index);
  std::mt19937_64 rng(seed);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto uniform = [&] { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); };

  const int h = cfg.height, w = cfg.width, n = cfg.frames_per_clip, k = cfg.num_classes;
  const auto hs = static_cast<std::size_t>(h), ws = static_cast<std::size_t>(w);
  const auto ks = static_cast<std::size_t>(k);

  SynthClip clip;
  clip.data.clip_id = clip_name(clip_index);
  clip.data.num_classes = k;

  const int min_side = std::min(h, w);
  for (int s = 0; s < cfg.shape_count; ++s) {
    MovingShape shape;
    shape.disk = uniform() < 0.5;
    if (shape.disk) {
      shape.half_w = uniform_int(std::max(1, min_side / 10), std::max(2, min_side / 5));
      shape.x = uniform_int(0, w - 1);
      shape.y = uniform_int(0, h - 1);
    } else {
      shape.half_w = uniform_int(std::max(1, w / 16), std::max(2, w / 6));
      shape.half_h = uniform_int(std::max(1, h / 16), std::max(2, h / 6));
      shape.x = uniform_int(-shape.half_w, w - shape.half_w);
      shape.y = uniform_int(-shape.half_h, h - shape.half_h);
    }
    shape.vx = uniform_int(-cfg.velocity_range, cfg.velocity_range);
    shape.vy = uniform_int(-cfg.velocity_range, cfg.velocity_range);
    shape.cls = static_cast<std::uint16_t>(uniform_int(1, k - 1));
    for (auto& c : shape.color) c = static_cast<float>(0.1 + 0.8 * uniform());
    shape.texture_seed = rng();
    clip.shapes.push_back(shape);
  }

  // Layers, labels, images.
  clip.data.frames.resize(static_cast<std::size_t>(n));
  clip.layers.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    auto& frame = clip.data.frames[static_cast<std::size_t>(t)];
    auto& layer = clip.layers[static_cast<std::size_t>(t)];
    layer = Tensor<std::uint16_t>(tubelabel::Shape{hs, ws}, 0);
    LabelMap gt(hs, ws, 0);
    ImageFrame img{Tensor<float>(tubelabel::Shape{3, hs, ws})};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto uy = static_cast<std::size_t>(y), ux = static_cast<std::size_t>(x);
        int top = -1;
        for (int s = cfg.shape_count - 1; s >= 0; --s) {
          if (clip.shapes[static_cast<std::size_t>(s)].contains(x, y, t)) {
            top = s;
            break;
          }
        }
        layer(uy, ux) = static_cast<std::uint16_t>(top + 1);
        if (top < 0) {
          for (std::size_t c = 0; c < 3; ++c) {
            img.data(c, uy, ux) = detail::clamp01(0.15 + 0.5 * detail::hash_unit(seed, x, y, static_cast<std::int64_t>(c)));
          }
          continue;
        }
        const auto& shape = clip.shapes[static_cast<std::size_t>(top)];
        gt(uy, ux) = shape.cls;
        const int lx = x - (shape.x + shape.vx * t), ly = y - (shape.y + shape.vy * t);
        for (std::size_t c = 0; c < 3; ++c) {
          const double tex = detail::hash_unit(shape.texture_seed, lx, ly, static_cast<std::int64_t>(c)) - 0.5;
          img.data(c, uy, ux) = detail::clamp01(shape.color[c] + 0.2 * tex);
        }
      }
    }
    frame.gt = std::move(gt);
    frame.image = std::move(img);
  }

  // Flow to each neighbor and its analytic visibility.
  clip.visible.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    auto& frame = clip.data.frames[static_cast<std::size_t>(t)];
    const auto& layer = clip.layers[static_cast<std::size_t>(t)];
    for (int d : {-1, +1}) {
      if (t + d < 0 || t + d >= n) continue;
      const auto& other = clip.layers[static_cast<std::size_t>(t + d)];
      FlowField flow{Tensor<float>(tubelabel::Shape{2, hs, ws}), t, t + d};
      Tensor<std::uint8_t> vis(tubelabel::Shape{hs, ws}, 0);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const auto uy = static_cast<std::size_t>(y), ux = static_cast<std::size_t>(x);
          const auto l = layer(uy, ux);
          int fx = 0, fy = 0;
          if (l > 0) {
            fx = d * clip.shapes[l - 1u].vx;
            fy = d * clip.shapes[l - 1u].vy;
          }
          flow.data(0, uy, ux) = static_cast<float>(fx);
          flow.data(1, uy, ux) = static_cast<float>(fy);
          const int qx = x + fx, qy = y + fy;
          if (qx >= 0 && qy >= 0 && qx < w && qy < h) {
            vis(uy, ux) = other(static_cast<std::size_t>(qy), static_cast<std::size_t>(qx)) == l;
          }
        }
      }
      frame.flows.emplace(d, std::move(flow));
      clip.visible[static_cast<std::size_t>(t)].emplace(d, std::move(vis));
    }
  }

  // Predictions: flicker whole shapes, flip cells, jitter logits, softmax.
  const auto& noise = cfg.noise;
  const int cell = noise.noise_cell;
  clip.flickered.assign(static_cast<std::size_t>(n), std::vector<std::uint8_t>(static_cast<std::size_t>(cfg.shape_count), 0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> logits(ks);
  for (int t = 0; t < n; ++t) {
    auto& frame = clip.data.frames[static_cast<std::size_t>(t)];
    const auto& layer = clip.layers[static_cast<std::size_t>(t)];

    std::vector<std::uint16_t> shape_class(static_cast<std::size_t>(cfg.shape_count));
    for (int s = 0; s < cfg.shape_count; ++s) {
      const auto us = static_cast<std::size_t>(s);
      shape_class[us] = clip.shapes[us].cls;
      const bool previous = t > 0 && clip.flickered[static_cast<std::size_t>(t - 1)][us];
      const bool flicker = uniform() < noise.flicker_prob;
      const int shift = uniform_int(1, k - 1);
      if (flicker && !previous) {
        clip.flickered[static_cast<std::size_t>(t)][us] = 1;
        shape_class[us] = static_cast<std::uint16_t>((clip.shapes[us].cls + shift) % k);
      }
    }

    const int ox = uniform_int(0, cell - 1), oy = uniform_int(0, cell - 1);
    const int cells_x = (w + ox + cell - 1) / cell, cells_y = (h + oy + cell - 1) / cell;
    const auto cell_count = static_cast<std::size_t>(cells_x * cells_y);
    std::vector<int> flip_shift(cell_count, 0);
    std::vector<double> jitter(cell_count * ks, 0.0);
    for (std::size_t i = 0; i < cell_count; ++i) {
      const bool flip = uniform() < noise.label_flip_prob;
      const int shift = uniform_int(1, k - 1);
      flip_shift[i] = flip ? shift : 0;
      for (std::size_t c = 0; c < ks; ++c) jitter[i * ks + c] = noise.confidence_jitter > 0.0 ? gauss(rng) : 0.0;
    }

    SoftSegMap pred{Tensor<float>(tubelabel::Shape{ks, hs, ws}), t};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto uy = static_cast<std::size_t>(y), ux = static_cast<std::size_t>(x);
        const auto l = layer(uy, ux);
        int label = l > 0 ? shape_class[l - 1u] : 0;
        const auto ci = static_cast<std::size_t>(((y + oy) / cell) * cells_x + (x + ox) / cell);
        label = (label + flip_shift[ci]) % k;
        double top = -1e300;
        for (std::size_t c = 0; c < ks; ++c) {
          logits[c] = ((static_cast<int>(c) == label ? 1.0 : 0.0) + noise.confidence_jitter * jitter[ci * ks + c]) /
                      noise.softmax_temperature;
          top = std::max(top, logits[c]);
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < ks; ++c) {
          logits[c] = std::exp(logits[c] - top);
          sum += logits[c];
        }
        for (std::size_t c = 0; c < ks; ++c) pred.data(c, uy, ux) = static_cast<float>(logits[c] / sum);
      }
    }
    frame.pred = std::move(pred);
  }
  return clip;
}

/// Renders every clip, writes NPY files under `out_dir/<clip_id>/` and
/// `out_dir/manifest.json`, and returns the manifest entries.
inline std::vector<ClipManifest> generate(const SynthConfig& cfg, const std::filesystem::path& out_dir, unsigned workers = 1) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
  const fs::path root = fs::absolute(out_dir);

  std::vector<ClipManifest> manifests(static_cast<std::size_t>(cfg.num_clips));
  parallel_for(manifests.size(), workers, [&](std::size_t ci) {
    const auto clip = render_clip(cfg, static_cast<int>(ci));
    const fs::path dir = root / clip.data.clip_id;
    fs::create_directories(dir);
    ClipManifest& m = manifests[ci];
    m.clip_id = clip.data.clip_id;
    m.num_classes = clip.data.num_classes;
    for (std::size_t t = 0; t < clip.data.frames.size(); ++t) {
      const auto& frame = clip.data.frames[t];
      char stem[32];
      std::snprintf(stem, sizeof stem, "%03zu", t);
      FrameEntry e;
      e.image = dir / ("image_" + std::string(stem) + ".npy");
      e.pred = dir / ("pred_" + std::string(stem) + ".npy");
      e.gt = dir / ("gt_" + std::string(stem) + ".npy");
      npy::save_array(e.image, frame.image.data);
      npy::save_array(e.pred, frame.pred.data);
      npy::save_array(*e.gt, frame.gt->data);
      for (const auto& [off, flow] : frame.flows) {
        e.flows[off] = dir / ("flow_" + std::string(stem) + (off < 0 ? "_m" : "_p") + std::to_string(std::abs(off)) + ".npy");
        npy::save_array(e.flows[off], flow.data);
      }
      m.frames.push_back(std::move(e));
    }
  });
  save_manifest(root / "manifest.json", manifests);
  return manifests;
}

}  // namespace tubelabel::synth

#endif  // TUBELABEL_SYNTH_HPP
