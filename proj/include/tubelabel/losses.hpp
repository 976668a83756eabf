// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_LOSSES_HPP
#define TUBELABEL_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iterator>
#include <ranges>
#include <span>
#include <vector>

#include "tubelabel/error.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel {

inline constexpr double kLogClamp = 1e-12;

struct LossConfig {
  double lambda_seg_s = 1.0;
  double lambda_seg_t = 1.0;
  double lambda_reg = 1.0;  // weight of the confidence regularizer, whose value is not computed here
  int tube_length = 2;

  void validate() const {
    if (lambda_seg_s < 0 || lambda_seg_t < 0 || lambda_reg < 0) {
      throw Error(ErrorKind::InvalidConfig, "loss weights must be >= 0");
    }
    if (tube_length < 1) throw Error(ErrorKind::InvalidConfig, "tube_length must be >= 1");
  }
};

namespace detail {

template <typename T>
void check_pred_gt(const Tensor<T>& pred, const LabelMap& gt, std::string_view what) {
  require_rank(pred.shape(), 3, what);
  require_same_plane(pred.dim(1), pred.dim(2), gt.height(), gt.width(), what);
}

}  // namespace detail

/// Mean over labeled pixels of -log p[gt]. Probabilities are clamped at
/// 1e-12 before the log.
template <typename T>
double cross_entropy(const Tensor<T>& pred, const LabelMap& gt) {
  detail::check_pred_gt(pred, gt, "cross_entropy");
  const std::size_t k = pred.dim(0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < gt.height(); ++y) {
    for (std::size_t x = 0; x < gt.width(); ++x) {
      const auto label = gt(y, x);
      if (label == kIgnore) continue;
      if (label >= k) throw Error(ErrorKind::ShapeMismatch, "cross_entropy: label " + std::to_string(label) + " >= K");
      total -= std::log(std::max(static_cast<double>(pred(label, y, x)), kLogClamp));
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::EmptyLabel, "cross_entropy: every pixel is ignored");
  return total / static_cast<double>(count);
}

inline double cross_entropy(const SoftSegMap& pred, const LabelMap& gt) { return cross_entropy(pred.data, gt); }

/// Dice(p, q) = 2 sum(p q) / (sum p^2 + sum q^2). Two all-zero inputs give 1.
template <std::ranges::sized_range P, std::ranges::sized_range Q>
double dice(const P& p, const Q& q) {
  if (std::ranges::size(p) != std::ranges::size(q)) {
    throw Error(ErrorKind::ShapeMismatch, "dice: sizes " + std::to_string(std::ranges::size(p)) + " vs " +
                                              std::to_string(std::ranges::size(q)));
  }
  double pq = 0.0, pp = 0.0, qq = 0.0;
  auto qi = std::ranges::begin(q);
  for (auto pi = std::ranges::begin(p); pi != std::ranges::end(p); ++pi, ++qi) {
    const double a = static_cast<double>(*pi), b = static_cast<double>(*qi);
    pq += a * b;
    pp += a * a;
    qq += b * b;
  }
  const double denom = pp + qq;
  if (denom == 0.0) return 1.0;
  return 2.0 * pq / denom;
}

template <typename T>
double dice(const Tensor<T>& p, const Tensor<T>& q) {
  if (p.shape() != q.shape()) {
    throw Error(ErrorKind::ShapeMismatch, "dice: " + shape_string(p.shape()) + " vs " + shape_string(q.shape()));
  }
  return dice(p.values(), q.values());
}

/// Predicted and ground-truth tube over consecutive frames.
struct TubePair {
  std::vector<SoftSegMap> pred;
  std::vector<LabelMap> gt;
};

struct TubeLoss {
  double loss = 0.0;
  std::vector<double> class_dice;     // per class, over the whole tube
  std::vector<Tensor<double>> grad;   // d loss / d pred, one K x H x W tensor per frame
};

/// sum_k (1 - Dice(pred tube of class k, one-hot gt tube of class k)).
/// Ignored ground-truth pixels are excluded from every sum and receive a zero
/// gradient.
template <typename T>
TubeLoss tube_matching_loss(std::span<const Tensor<T>> pred, std::span<const LabelMap> gt) {
  if (pred.empty() || pred.size() != gt.size()) {
    throw Error(ErrorKind::ShapeMismatch, "tube: " + std::to_string(pred.size()) + " predictions vs " +
                                              std::to_string(gt.size()) + " label maps");
  }
  const Shape& shape = pred.front().shape();
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].shape() != shape) {
      throw Error(ErrorKind::ShapeMismatch, "tube: frame " + std::to_string(t) + " has shape " +
                                                shape_string(pred[t].shape()) + ", expected " + shape_string(shape));
    }
    detail::check_pred_gt(pred[t], gt[t], "tube");
  }
  const std::size_t k_count = shape[0], h = shape[1], w = shape[2];
  for (const auto& g : gt) {
    for (auto v : g.data.values()) {
      if (v != kIgnore && v >= k_count) throw Error(ErrorKind::ShapeMismatch, "tube: label " + std::to_string(v) + " >= K");
    }
  }

  TubeLoss out;
  out.class_dice.resize(k_count);
  out.grad.assign(pred.size(), Tensor<double>(shape));

  for (std::size_t k = 0; k < k_count; ++k) {
    double s = 0.0, pp = 0.0, qq = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const auto label = gt[t](y, x);
          if (label == kIgnore) continue;
          const double p = pred[t](k, y, x);
          const double q = label == k ? 1.0 : 0.0;
          s += p * q;
          pp += p * p;
          qq += q;
        }
      }
    }
    const double d = pp + qq;
    if (d == 0.0) {
      out.class_dice[k] = 1.0;
      continue;
    }
    out.class_dice[k] = 2.0 * s / d;
    out.loss += 1.0 - out.class_dice[k];

    // d(1 - 2S/D)/dp_v = -(2 q_v D - 2S * 2 p_v) / D^2
    const double d2 = d * d;
    for (std::size_t t = 0; t < pred.size(); ++t) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const auto label = gt[t](y, x);
          if (label == kIgnore) continue;
          const double p = pred[t](k, y, x);
          const double q = label == k ? 1.0 : 0.0;
          out.grad[t](k, y, x) = -(2.0 * q * d - 4.0 * s * p) / d2;
        }
      }
    }
  }
  return out;
}

inline TubeLoss tube_matching_loss(const TubePair& tube) {
  std::vector<Tensor<float>> pred;
  pred.reserve(tube.pred.size());
  for (const auto& m : tube.pred) pred.push_back(m.data);
  return tube_matching_loss(std::span<const Tensor<float>>(pred), std::span<const LabelMap>(tube.gt));
}

struct VstObjective {
  double seg = 0.0;
  double reg = 0.0;  // always 0: the regularizer is not modelled
  double total = 0.0;
};

/// Sum over frames of cross-entropy against the refined pseudo labels. Frames
/// whose labels are all ignored contribute 0.
inline VstObjective vst_objective(std::span<const SoftSegMap> preds, std::span<const LabelMap> refined,
                                  const LossConfig& cfg) {
  cfg.validate();
  if (preds.size() != refined.size()) {
    throw Error(ErrorKind::ShapeMismatch, "vst_objective: " + std::to_string(preds.size()) + " predictions vs " +
                                              std::to_string(refined.size()) + " label maps");
  }
  VstObjective out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    detail::check_pred_gt(preds[i].data, refined[i], "vst_objective");
    if (refined[i].labeled_count() == 0) continue;
    out.seg += cross_entropy(preds[i], refined[i]);
  }
  out.total = out.seg + cfg.lambda_reg * out.reg;
  return out;
}

}  // namespace tubelabel

#endif  // TUBELABEL_LOSSES_HPP
