// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_CONFIG_HPP
#define TUBELABEL_CONFIG_HPP

// TOML configuration for the pipeline and the individual CLI stages.
//
//   out_dir = "run"          workers = 4          seed = 7
//   manifest = "data/manifest.json"   # optional, skips the synth stage
//   [synth]   seed, num_clips, frames_per_clip, height, width, num_classes,
//             shape_count, velocity_range
//   [synth.noise] label_flip_prob, softmax_temperature, flicker_prob,
//             confidence_jitter, noise_cell
//   [warp]    alpha_occ, th
//   [pseudo]  strategy, alpha, beta, gamma, theta0, fixed_threshold, aggregate
//   [refine]  mode, strict_consensus, reference_offset
//   [loss]    lambda_seg_s, lambda_seg_t, lambda_reg, tube_length
//   [metrics] spans

#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "tubelabel/error.hpp"
#include "tubelabel/flow_warp.hpp"
#include "tubelabel/losses.hpp"
#include "tubelabel/pseudo.hpp"
#include "tubelabel/refine.hpp"
#include "tubelabel/synth.hpp"

namespace tubelabel {

struct PipelineConfig {
  std::filesystem::path out_dir = "run";
  std::optional<std::filesystem::path> manifest;
  unsigned workers = 1;
  bool force = false;
  synth::SynthConfig synth;
  WarpParams warp;
  PseudoConfig pseudo;
  RefineParams refine;
  LossConfig loss;
  std::vector<int> spans{1, 2, 3, 4};

  void validate() const {
    if (!manifest) synth.validate();
    pseudo.validate();
    loss.validate();
    if (!(warp.alpha_occ > 0.0)) throw Error(ErrorKind::InvalidConfig, "warp.alpha_occ must be > 0");
    if (!(warp.th > 0.0 && warp.th < 1.0)) throw Error(ErrorKind::InvalidConfig, "warp.th must be in (0, 1)");
    if (refine.reference_offset == 0) throw Error(ErrorKind::InvalidConfig, "refine.reference_offset must be nonzero");
    if (spans.empty()) throw Error(ErrorKind::InvalidConfig, "metrics.spans must not be empty");
    for (int s : spans) {
      if (s < 1) throw Error(ErrorKind::InvalidConfig, "metrics.spans entries must be >= 1");
    }
    if (workers == 0) throw Error(ErrorKind::InvalidConfig, "workers must be >= 1");
  }
};

namespace detail {

inline void check_keys(const toml::table& table, std::string_view where, std::initializer_list<std::string_view> allowed) {
  for (auto&& [key, node] : table) {
    bool known = false;
    for (auto a : allowed) known = known || key.str() == a;
    if (!known) throw Error(ErrorKind::InvalidConfig, std::string(where) + ": unknown key '" + std::string(key.str()) + "'");
  }
}

template <typename T>
void read_into(const toml::table& table, std::string_view key, T& target, std::string_view where) {
  const auto* node = table.get(key);
  if (!node) return;
  if constexpr (std::is_same_v<T, double>) {
    if (auto v = node->value<double>()) {
      target = *v;
      return;
    }
  } else if constexpr (std::is_same_v<T, bool>) {
    if (auto v = node->value<bool>()) {
      target = *v;
      return;
    }
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (auto v = node->value<std::string>()) {
      target = *v;
      return;
    }
  } else {
    if (auto v = node->value<std::int64_t>()) {
      target = static_cast<T>(*v);
      return;
    }
  }
  throw Error(ErrorKind::InvalidConfig, std::string(where) + "." + std::string(key) + " has the wrong type");
}

inline const toml::table* subtable(const toml::table& root, std::string_view key) {
  const auto* node = root.get(key);
  if (!node) return nullptr;
  if (!node->is_table()) throw Error(ErrorKind::InvalidConfig, std::string(key) + " must be a table");
  return node->as_table();
}

}  // namespace detail

/// Reads SynthConfig keys from `table` (used for both `[synth]` and for a
/// standalone synth config file whose keys sit at top level).
inline void apply_synth_table(const toml::table& table, synth::SynthConfig& cfg, std::string_view where) {
  detail::check_keys(table, where,
                     {"seed", "num_clips", "frames_per_clip", "height", "width", "num_classes", "shape_count",
                      "velocity_range", "noise", "label_flip_prob", "softmax_temperature", "flicker_prob",
                      "confidence_jitter", "noise_cell"});
  detail::read_into(table, "seed", cfg.seed, where);
  detail::read_into(table, "num_clips", cfg.num_clips, where);
  detail::read_into(table, "frames_per_clip", cfg.frames_per_clip, where);
  detail::read_into(table, "height", cfg.height, where);
  detail::read_into(table, "width", cfg.width, where);
  detail::read_into(table, "num_classes", cfg.num_classes, where);
  detail::read_into(table, "shape_count", cfg.shape_count, where);
  detail::read_into(table, "velocity_range", cfg.velocity_range, where);
  auto read_noise = [&](const toml::table& t, std::string_view w) {
    detail::read_into(t, "label_flip_prob", cfg.noise.label_flip_prob, w);
    detail::read_into(t, "softmax_temperature", cfg.noise.softmax_temperature, w);
    detail::read_into(t, "flicker_prob", cfg.noise.flicker_prob, w);
    detail::read_into(t, "confidence_jitter", cfg.noise.confidence_jitter, w);
    detail::read_into(t, "noise_cell", cfg.noise.noise_cell, w);
  };
  read_noise(table, where);
  if (const auto* noise = detail::subtable(table, "noise")) {
    detail::check_keys(*noise, "synth.noise",
                       {"label_flip_prob", "softmax_temperature", "flicker_prob", "confidence_jitter", "noise_cell"});
    read_noise(*noise, "synth.noise");
  }
}

inline toml::table parse_toml(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorKind::MissingFile, path.string());
  try {
    return toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + std::string(e.description()));
  }
}

inline synth::SynthConfig load_synth_config(const std::filesystem::path& path) {
  const auto root = parse_toml(path);
  synth::SynthConfig cfg;
  if (const auto* t = detail::subtable(root, "synth")) {
    apply_synth_table(*t, cfg, "synth");
  } else {
    apply_synth_table(root, cfg, "synth config");
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig parse_pipeline_config(const toml::table& root, const std::filesystem::path& base = {}) {
  PipelineConfig cfg;
  detail::check_keys(root, "config",
                     {"out_dir", "manifest", "workers", "seed", "synth", "warp", "pseudo", "refine", "loss", "metrics"});
  std::string s;
  if (root.get("out_dir")) {
    detail::read_into(root, "out_dir", s, "config");
    cfg.out_dir = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base / s;
  }
  if (root.get("manifest")) {
    detail::read_into(root, "manifest", s, "config");
    cfg.manifest = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base / s;
  }
  detail::read_into(root, "workers", cfg.workers, "config");

  if (const auto* t = detail::subtable(root, "synth")) apply_synth_table(*t, cfg.synth, "synth");
  detail::read_into(root, "seed", cfg.synth.seed, "config");

  if (const auto* t = detail::subtable(root, "warp")) {
    detail::check_keys(*t, "warp", {"alpha_occ", "th"});
    detail::read_into(*t, "alpha_occ", cfg.warp.alpha_occ, "warp");
    detail::read_into(*t, "th", cfg.warp.th, "warp");
  }
  if (const auto* t = detail::subtable(root, "pseudo")) {
    detail::check_keys(*t, "pseudo", {"strategy", "alpha", "beta", "gamma", "theta0", "fixed_threshold", "aggregate"});
    if (t->get("strategy")) {
      detail::read_into(*t, "strategy", s, "pseudo");
      cfg.pseudo.strategy = parse_strategy(s);
    }
    detail::read_into(*t, "alpha", cfg.pseudo.alpha, "pseudo");
    detail::read_into(*t, "beta", cfg.pseudo.beta, "pseudo");
    detail::read_into(*t, "gamma", cfg.pseudo.gamma, "pseudo");
    detail::read_into(*t, "theta0", cfg.pseudo.theta0, "pseudo");
    detail::read_into(*t, "fixed_threshold", cfg.pseudo.fixed_threshold, "pseudo");
    detail::read_into(*t, "aggregate", cfg.pseudo.aggregate, "pseudo");
  }
  if (const auto* t = detail::subtable(root, "refine")) {
    detail::check_keys(*t, "refine", {"mode", "strict_consensus", "reference_offset"});
    if (t->get("mode")) {
      detail::read_into(*t, "mode", s, "refine");
      cfg.refine.mode = parse_refine_mode(s);
    }
    detail::read_into(*t, "strict_consensus", cfg.refine.strict_consensus, "refine");
    detail::read_into(*t, "reference_offset", cfg.refine.reference_offset, "refine");
  }
  if (const auto* t = detail::subtable(root, "loss")) {
    detail::check_keys(*t, "loss", {"lambda_seg_s", "lambda_seg_t", "lambda_reg", "tube_length"});
    detail::read_into(*t, "lambda_seg_s", cfg.loss.lambda_seg_s, "loss");
    detail::read_into(*t, "lambda_seg_t", cfg.loss.lambda_seg_t, "loss");
    detail::read_into(*t, "lambda_reg", cfg.loss.lambda_reg, "loss");
    detail::read_into(*t, "tube_length", cfg.loss.tube_length, "loss");
  }
  if (const auto* t = detail::subtable(root, "metrics")) {
    detail::check_keys(*t, "metrics", {"spans"});
    if (const auto* node = t->get("spans")) {
      const auto* arr = node->as_array();
      if (!arr) throw Error(ErrorKind::InvalidConfig, "metrics.spans must be an array of integers");
      cfg.spans.clear();
      for (const auto& v : *arr) {
        const auto i = v.value<std::int64_t>();
        if (!i) throw Error(ErrorKind::InvalidConfig, "metrics.spans must be an array of integers");
        cfg.spans.push_back(static_cast<int>(*i));
      }
    }
  }
  cfg.refine.warp = cfg.warp;
  return cfg;
}

/// Relative paths in the file resolve against the file's directory.
inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  return parse_pipeline_config(parse_toml(path), std::filesystem::absolute(path).parent_path());
}

}  // namespace tubelabel

#endif  // TUBELABEL_CONFIG_HPP
