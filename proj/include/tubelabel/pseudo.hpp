// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_PSEUDO_HPP
#define TUBELABEL_PSEUDO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "tubelabel/aggregate.hpp"
#include "tubelabel/error.hpp"
#include "tubelabel/manifest.hpp"
#include "tubelabel/parallel.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel {

enum class Strategy { Fixed, ClassBalanced, InstanceAdaptive, ClipAdaptive };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Fixed: return "fixed";
    case Strategy::ClassBalanced: return "class_balanced";
    case Strategy::InstanceAdaptive: return "instance_adaptive";
    case Strategy::ClipAdaptive: return "clip_adaptive";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view name) {
  for (auto s : {Strategy::Fixed, Strategy::ClassBalanced, Strategy::InstanceAdaptive, Strategy::ClipAdaptive}) {
    if (name == to_string(s)) return s;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown strategy '" + std::string(name) + "'");
}

struct PseudoConfig {
  Strategy strategy = Strategy::ClipAdaptive;
  double alpha = 0.5;            // proportion
  double beta = 0.9;             // EMA momentum
  double gamma = 1.0;            // decay exponent on the previous threshold
  double fixed_threshold = 0.9;  // Strategy::Fixed only
  double theta0 = 0.9;           // initial per-class threshold
  bool aggregate = true;         // Strategy::ClipAdaptive only

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::InvalidConfig, "alpha must be in (0, 1]");
    if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorKind::InvalidConfig, "beta must be in [0, 1)");
    if (!(gamma >= 0.0)) throw Error(ErrorKind::InvalidConfig, "gamma must be >= 0");
    if (!(fixed_threshold >= 0.0 && fixed_threshold <= 1.0)) {
      throw Error(ErrorKind::InvalidConfig, "fixed_threshold must be in [0, 1]");
    }
    if (!(theta0 >= 0.0 && theta0 <= 1.0)) throw Error(ErrorKind::InvalidConfig, "theta0 must be in [0, 1]");
  }
};

/// Per-class thresholds carried across units (clips, or frames for the
/// image-level strategies). `clips_seen` counts updates.
struct ThresholdState {
  std::vector<double> theta;
  int clips_seen = 0;

  static ThresholdState initial(std::size_t num_classes, double theta0 = 0.9) {
    return ThresholdState{std::vector<double>(num_classes, theta0), 0};
  }

  friend bool operator==(const ThresholdState&, const ThresholdState&) = default;
};

/// For each class, the max-probabilities of pixels whose argmax is that
/// class, sorted descending. Ties keep pixel scan order.
struct ConfidencePool {
  std::vector<std::vector<float>> per_class;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& p : per_class) n += p.size();
    return n;
  }
};

struct ArgMax {
  std::uint16_t cls;
  float value;
};

/// Lowest class index wins ties.
inline ArgMax argmax_at(const SoftSegMap& m, std::size_t y, std::size_t x) {
  ArgMax best{0, m.data(0, y, x)};
  for (std::size_t c = 1; c < m.num_classes(); ++c) {
    const float v = m.data(c, y, x);
    if (v > best.value) best = {static_cast<std::uint16_t>(c), v};
  }
  return best;
}

/// A pixel keeps its argmax class iff the max probability strictly exceeds
/// that class's threshold.
inline LabelMap fixed_threshold_labels(const SoftSegMap& pred, std::span<const double> theta) {
  require_rank(pred.data.shape(), 3, "pseudo labels");
  if (theta.size() != pred.num_classes()) {
    throw Error(ErrorKind::ShapeMismatch, "pseudo labels: " + std::to_string(theta.size()) + " thresholds for K=" +
                                              std::to_string(pred.num_classes()));
  }
  LabelMap out(pred.height(), pred.width(), kIgnore);
  for (std::size_t y = 0; y < pred.height(); ++y) {
    for (std::size_t x = 0; x < pred.width(); ++x) {
      const auto best = argmax_at(pred, y, x);
      if (static_cast<double>(best.value) > theta[best.cls]) out(y, x) = best.cls;
    }
  }
  return out;
}

inline ConfidencePool pool_confidences(std::span<const SoftSegMap> preds) {
  if (preds.empty()) throw Error(ErrorKind::ShapeMismatch, "pool_confidences: no frames");
  const Shape& shape = preds.front().data.shape();
  require_rank(shape, 3, "pool_confidences");
  ConfidencePool pool;
  pool.per_class.resize(shape[0]);
  for (const auto& m : preds) {
    if (m.data.shape() != shape) {
      throw Error(ErrorKind::ShapeMismatch, "pool_confidences: " + shape_string(m.data.shape()) + " vs " + shape_string(shape));
    }
    for (std::size_t y = 0; y < m.height(); ++y) {
      for (std::size_t x = 0; x < m.width(); ++x) {
        const auto best = argmax_at(m, y, x);
        pool.per_class[best.cls].push_back(best.value);
      }
    }
  }
  for (auto& values : pool.per_class) std::stable_sort(values.begin(), values.end(), std::greater<>());
  return pool;
}

/// Confidence found at index floor(alpha * theta_prev^gamma * |pool|) of the
/// descending pool, clamped to the last element. An empty pool leaves the
/// threshold where it was.
inline double psi(std::span<const float> pool, double theta_prev, double alpha, double gamma) {
  if (pool.empty()) return theta_prev;
  const double position = std::floor(alpha * std::pow(theta_prev, gamma) * static_cast<double>(pool.size()));
  const auto index = static_cast<std::size_t>(std::clamp(position, 0.0, static_cast<double>(pool.size() - 1)));
  return static_cast<double>(pool[index]);
}

/// theta_new = beta * theta_old + (1 - beta) * psi(pool, theta_old). Every
/// class reads the pre-update thresholds.
inline ThresholdState update_thresholds(const ThresholdState& state, const ConfidencePool& pools, const PseudoConfig& cfg) {
  if (pools.per_class.size() != state.theta.size()) {
    throw Error(ErrorKind::ShapeMismatch, "update_thresholds: pool has " + std::to_string(pools.per_class.size()) +
                                              " classes, state has " + std::to_string(state.theta.size()));
  }
  ThresholdState next{std::vector<double>(state.theta.size()), state.clips_seen + 1};
  for (std::size_t k = 0; k < state.theta.size(); ++k) {
    const double observed = psi(pools.per_class[k], state.theta[k], cfg.alpha, cfg.gamma);
    next.theta[k] = cfg.beta * state.theta[k] + (1.0 - cfg.beta) * observed;
  }
  return next;
}

/// Thresholds keeping the top floor(alpha * n) entries of each class pool.
inline std::vector<double> class_balanced_thresholds(const ConfidencePool& pools, double alpha,
                                                     std::span<const double> fallback) {
  std::vector<double> theta(pools.per_class.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const auto& pool = pools.per_class[k];
    if (pool.empty()) {
      theta[k] = fallback[k];
      continue;
    }
    const auto keep = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(pool.size())));
    theta[k] = keep < pool.size() ? static_cast<double>(pool[keep]) : 0.0;
  }
  return theta;
}

struct ClipLabels {
  std::vector<LabelMap> labels;
  ThresholdState state;
};

/// One clip-level step: pool the whole (aggregated) clip, update the
/// thresholds once, then label every frame with the same updated vector.
inline ClipLabels generate_clip_labels(std::span<const SoftSegMap> frames, const ThresholdState& state,
                                       const PseudoConfig& cfg) {
  const auto pools = pool_confidences(frames);
  ClipLabels out{{}, update_thresholds(state, pools, cfg)};
  out.labels.reserve(frames.size());
  for (const auto& f : frames) out.labels.push_back(fixed_threshold_labels(f, out.state.theta));
  return out;
}

inline ClipLabels generate_clip_labels(const AggregatedClip& agg, const ThresholdState& state, const PseudoConfig& cfg) {
  return generate_clip_labels(std::span<const SoftSegMap>(agg.frames), state, cfg);
}

/// Image-unit step for the fixed, class-balanced and instance-adaptive
/// strategies.
inline ClipLabels generate_frame_labels(const SoftSegMap& pred, const ThresholdState& state, const PseudoConfig& cfg) {
  const std::span<const SoftSegMap> unit(&pred, 1);
  switch (cfg.strategy) {
    case Strategy::Fixed: {
      ThresholdState next{std::vector<double>(state.theta.size(), cfg.fixed_threshold), state.clips_seen + 1};
      auto labels = fixed_threshold_labels(pred, next.theta);
      return {{std::move(labels)}, std::move(next)};
    }
    case Strategy::ClassBalanced: {
      ThresholdState next{class_balanced_thresholds(pool_confidences(unit), cfg.alpha, state.theta), state.clips_seen + 1};
      auto labels = fixed_threshold_labels(pred, next.theta);
      return {{std::move(labels)}, std::move(next)};
    }
    case Strategy::InstanceAdaptive:
      return generate_clip_labels(unit, state, cfg);
    case Strategy::ClipAdaptive:
      break;
  }
  throw Error(ErrorKind::InvalidConfig, "generate_frame_labels: clip_adaptive works on whole clips");
}

struct DatasetLabels {
  std::vector<std::vector<LabelMap>> labels;  // [clip][frame]
  ThresholdState final_state;
  std::vector<std::vector<double>> theta_trace;  // thresholds after each update
  std::vector<std::optional<double>> class_proportion;  // labeled / argmax candidates, per class
  double overall_proportion = 0.0;                       // labeled / all pixels
};

namespace detail {

inline void tally_proportions(DatasetLabels& out, std::span<const ClipData> clips, std::size_t k) {
  std::vector<std::size_t> candidates(k, 0), labeled(k, 0);
  std::size_t total = 0, kept = 0;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    for (std::size_t f = 0; f < clips[c].frames.size(); ++f) {
      const auto& pred = clips[c].frames[f].pred;
      const auto& lab = out.labels[c][f];
      for (std::size_t y = 0; y < pred.height(); ++y) {
        for (std::size_t x = 0; x < pred.width(); ++x) {
          ++total;
          ++candidates[argmax_at(pred, y, x).cls];
          const auto v = lab(y, x);
          if (v != kIgnore) {
            ++labeled[v];
            ++kept;
          }
        }
      }
    }
  }
  out.class_proportion.assign(k, std::nullopt);
  for (std::size_t i = 0; i < k; ++i) {
    if (candidates[i] > 0) out.class_proportion[i] = static_cast<double>(labeled[i]) / static_cast<double>(candidates[i]);
  }
  out.overall_proportion = total ? static_cast<double>(kept) / static_cast<double>(total) : 0.0;
}

}  // namespace detail

/// Runs pseudo-label generation over clips in the given order. Thresholds are
/// a sequential fold over units (clips for clip_adaptive, frames otherwise),
/// so the result depends on clip order but not on the worker count.
inline DatasetLabels generate_dataset_labels(std::span<const ClipData> clips, const PseudoConfig& cfg,
                                             const WarpParams& params, unsigned workers = 1) {
  cfg.validate();
  DatasetLabels out;
  if (clips.empty()) return out;
  const auto k = static_cast<std::size_t>(clips.front().num_classes);
  ThresholdState state = ThresholdState::initial(k, cfg.theta0);
  out.labels.resize(clips.size());

  if (cfg.strategy == Strategy::ClipAdaptive) {
    std::vector<AggregatedClip> aggregated(clips.size());
    parallel_for(clips.size(), workers, [&](std::size_t i) {
      aggregated[i] = cfg.aggregate ? aggregate_clip(clips[i], params) : unaggregated(clips[i]);
    });
    for (std::size_t i = 0; i < clips.size(); ++i) {
      auto step = generate_clip_labels(aggregated[i], state, cfg);
      state = std::move(step.state);
      out.theta_trace.push_back(state.theta);
      out.labels[i] = std::move(step.labels);
    }
  } else {
    for (std::size_t i = 0; i < clips.size(); ++i) {
      for (const auto& frame : clips[i].frames) {
        auto step = generate_frame_labels(frame.pred, state, cfg);
        if (cfg.strategy == Strategy::InstanceAdaptive) {
          state = step.state;
        } else {
          state.clips_seen = step.state.clips_seen;
        }
        out.theta_trace.push_back(step.state.theta);
        out.labels[i].push_back(std::move(step.labels.front()));
      }
    }
  }
  out.final_state = state;
  if (cfg.strategy != Strategy::InstanceAdaptive && cfg.strategy != Strategy::ClipAdaptive && !out.theta_trace.empty()) {
    out.final_state.theta = out.theta_trace.back();
  }
  detail::tally_proportions(out, clips, k);
  return out;
}

inline nlohmann::json report_json(const DatasetLabels& labels, const PseudoConfig& cfg) {
  nlohmann::json j;
  j["strategy"] = std::string(to_string(cfg.strategy));
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["gamma"] = cfg.gamma;
  j["theta0"] = cfg.theta0;
  j["aggregate"] = cfg.strategy == Strategy::ClipAdaptive && cfg.aggregate;
  j["final_theta"] = labels.final_state.theta;
  j["updates"] = labels.final_state.clips_seen;
  j["class_proportion"] = nlohmann::json::array();
  for (const auto& p : labels.class_proportion) {
    if (p) {
      j["class_proportion"].push_back(*p);
    } else {
      j["class_proportion"].push_back(nullptr);
    }
  }
  j["overall_proportion"] = labels.overall_proportion;
  return j;
}

struct AlphaCalibration {
  double alpha = 1.0;
  double coverage = 0.0;
};

/// Bisects alpha in (0, 1] so that `coverage_of(alpha)` lands within `tol`
/// of `target`, assuming coverage grows with alpha. Returns the closest
/// point seen when the tolerance cannot be met.
template <typename CoverageFn>
AlphaCalibration calibrate_alpha(CoverageFn&& coverage_of, double target, double tol = 0.005, int max_iter = 40) {
  AlphaCalibration best{1.0, coverage_of(1.0)};
  if (best.coverage <= target + tol) return best;
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < max_iter; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cov = coverage_of(mid);
    if (std::abs(cov - target) < std::abs(best.coverage - target)) best = {mid, cov};
    if (std::abs(cov - target) <= tol) break;
    (cov < target ? lo : hi) = mid;
  }
  return best;
}

}  // namespace tubelabel

#endif  // TUBELABEL_PSEUDO_HPP
