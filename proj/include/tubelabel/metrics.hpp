// SPDX-License-Identifier: Apache-2.0
#ifndef TUBELABEL_METRICS_HPP
#define TUBELABEL_METRICS_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tubelabel/error.hpp"
#include "tubelabel/tensor.hpp"

namespace tubelabel {

/// K x K pixel counts, rows = ground-truth class, columns = predicted class.
/// Pixels where either side is kIgnore are tallied in `ignored`.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t ignored = 0;

  explicit ConfusionMatrix(std::size_t k = 0) : num_classes(k), counts(k * k, 0) {}

  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts[gt * num_classes + pred]; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts[gt * num_classes + pred]; }

  std::uint64_t row(std::size_t k) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < num_classes; ++j) s += at(k, j);
    return s;
  }
  std::uint64_t col(std::size_t k) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < num_classes; ++i) s += at(i, k);
    return s;
  }
  std::uint64_t counted() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }

  void add(const LabelMap& pred, const LabelMap& gt) {
    require_same_plane(pred.height(), pred.width(), gt.height(), gt.width(), "confusion");
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
      const auto g = gt.data[i], p = pred.data[i];
      if (g == kIgnore || p == kIgnore) {
        ++ignored;
        continue;
      }
      if (g >= num_classes || p >= num_classes) {
        throw Error(ErrorKind::ShapeMismatch, "confusion: class id >= K=" + std::to_string(num_classes));
      }
      ++at(g, p);
    }
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct MiouResult {
  std::vector<std::optional<double>> per_class;  // empty for classes absent from both sides
  double mean = 0.0;
  ConfusionMatrix confusion;
};

namespace detail {

inline void check_aligned(std::size_t a, std::size_t b, std::string_view what) {
  if (a != b) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": " + std::to_string(a) + " predictions vs " +
                                              std::to_string(b) + " ground-truth maps");
  }
}

inline MiouResult miou_from(ConfusionMatrix cm) {
  MiouResult out{std::vector<std::optional<double>>(cm.num_classes), 0.0, ConfusionMatrix(0)};
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < cm.num_classes; ++k) {
    const auto inter = cm.at(k, k);
    const auto uni = cm.row(k) + cm.col(k) - inter;
    if (uni == 0) continue;
    out.per_class[k] = static_cast<double>(inter) / static_cast<double>(uni);
    sum += *out.per_class[k];
    ++present;
  }
  if (present == 0) throw Error(ErrorKind::EmptyEvaluation, "no labeled pixels to evaluate");
  out.mean = sum / static_cast<double>(present);
  out.confusion = std::move(cm);
  return out;
}

}  // namespace detail

/// Mean IoU as a fraction in [0, 1], averaged over classes present in the
/// ground truth or the prediction.
inline MiouResult miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts, std::size_t num_classes) {
  detail::check_aligned(preds.size(), gts.size(), "miou");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], gts[i]);
  return detail::miou_from(std::move(cm));
}

struct PMiouResult {
  MiouResult miou;
  double coverage = 0.0;  // labeled fraction of ground-truth-valid pixels
};

/// mIoU restricted to pixels carrying both a pseudo label and a ground-truth
/// label, with the pseudo-label coverage it was measured at.
inline PMiouResult p_miou(std::span<const LabelMap> pseudo, std::span<const LabelMap> gts, std::size_t num_classes) {
  detail::check_aligned(pseudo.size(), gts.size(), "p_miou");
  ConfusionMatrix cm(num_classes);
  std::uint64_t valid = 0, labeled = 0;
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    cm.add(pseudo[i], gts[i]);
    for (std::size_t p = 0; p < gts[i].data.size(); ++p) {
      if (gts[i].data[p] == kIgnore) continue;
      ++valid;
      labeled += pseudo[i].data[p] != kIgnore;
    }
  }
  if (valid == 0) throw Error(ErrorKind::EmptyEvaluation, "ground truth is entirely ignored");
  PMiouResult out{detail::miou_from(std::move(cm)), 0.0};
  out.coverage = static_cast<double>(labeled) / static_cast<double>(valid);
  return out;
}

/// Fixed-order pairwise summation.
inline double pairwise_sum(std::span<const double> v) {
  if (v.empty()) return 0.0;
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// TP/FP/FN tallies and matched IoUs per (span, class), accumulated over all
/// windows of all clips before the final division.
struct VpqAccumulator {
  struct Cell {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    std::vector<double> ious;  // one per true positive

    double iou_sum() const { return pairwise_sum(ious); }
  };

  std::vector<int> spans;
  std::size_t num_classes = 0;
  std::vector<Cell> cells;  // [span index][class]

  VpqAccumulator(std::vector<int> spans_, std::size_t k)
      : spans(std::move(spans_)), num_classes(k), cells(spans.size() * k) {}

  Cell& cell(std::size_t s, std::size_t k) { return cells[s * num_classes + k]; }
  const Cell& cell(std::size_t s, std::size_t k) const { return cells[s * num_classes + k]; }
};

struct VpqResult {
  std::vector<int> spans;
  std::vector<double> per_span;  // percent
  std::vector<std::vector<std::optional<double>>> per_span_class;  // percent, empty where inactive
  double mean = 0.0;             // percent, mean over spans
};

namespace detail {

struct FrameTally {
  std::vector<std::uint64_t> inter, pred, gt;  // per class
};

inline FrameTally tally_frame(const LabelMap& pred, const LabelMap& gt, std::size_t k) {
  require_same_plane(pred.height(), pred.width(), gt.height(), gt.width(), "vpq");
  FrameTally t{std::vector<std::uint64_t>(k), std::vector<std::uint64_t>(k), std::vector<std::uint64_t>(k)};
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const auto g = gt.data[i], p = pred.data[i];
    if (g == kIgnore) continue;
    if (g >= k || (p != kIgnore && p >= k)) throw Error(ErrorKind::ShapeMismatch, "vpq: class id >= K");
    ++t.gt[g];
    if (p == kIgnore) continue;
    ++t.pred[p];
    if (p == g) ++t.inter[g];
  }
  return t;
}

}  // namespace detail

/// Adds every window of every span for one clip. A class's tube in a window
/// is the stack of its per-frame pixel sets; ground-truth-ignored pixels
/// belong to neither tube.
inline void accumulate_vpq(VpqAccumulator& acc, std::span<const LabelMap> preds, std::span<const LabelMap> gts) {
  detail::check_aligned(preds.size(), gts.size(), "vpq");
  const std::size_t k = acc.num_classes;
  std::vector<detail::FrameTally> frames;
  frames.reserve(preds.size());
  for (std::size_t t = 0; t < preds.size(); ++t) frames.push_back(detail::tally_frame(preds[t], gts[t], k));

  for (std::size_t s = 0; s < acc.spans.size(); ++s) {
    const int span = acc.spans[s];
    if (span < 1 || static_cast<std::size_t>(span) > preds.size()) {
      throw Error(ErrorKind::BadSpan, "span " + std::to_string(span) + " for a clip of " + std::to_string(preds.size()) + " frames");
    }
    const auto w = static_cast<std::size_t>(span);
    for (std::size_t start = 0; start + w <= frames.size(); ++start) {
      for (std::size_t c = 0; c < k; ++c) {
        std::uint64_t inter = 0, pred = 0, gt = 0;
        for (std::size_t t = start; t < start + w; ++t) {
          inter += frames[t].inter[c];
          pred += frames[t].pred[c];
          gt += frames[t].gt[c];
        }
        auto& cell = acc.cell(s, c);
        if (pred > 0 && gt > 0) {
          const double iou = static_cast<double>(inter) / static_cast<double>(pred + gt - inter);
          if (iou > 0.5) {
            ++cell.tp;
            cell.ious.push_back(iou);
            continue;
          }
        }
        if (pred > 0) ++cell.fp;
        if (gt > 0) ++cell.fn;
      }
    }
  }
}

inline VpqResult finalize_vpq(const VpqAccumulator& acc) {
  VpqResult out;
  out.spans = acc.spans;
  for (std::size_t s = 0; s < acc.spans.size(); ++s) {
    std::vector<std::optional<double>> per_class(acc.num_classes);
    std::vector<double> active;
    for (std::size_t c = 0; c < acc.num_classes; ++c) {
      const auto& cell = acc.cell(s, c);
      if (cell.tp + cell.fp + cell.fn == 0) continue;
      const double denom = static_cast<double>(cell.tp) + 0.5 * static_cast<double>(cell.fp) + 0.5 * static_cast<double>(cell.fn);
      const double q = cell.iou_sum() / denom;
      per_class[c] = 100.0 * q;
      active.push_back(q);
    }
    if (active.empty()) throw Error(ErrorKind::EmptyEvaluation, "vpq: no class is active for span " + std::to_string(acc.spans[s]));
    out.per_span.push_back(100.0 * pairwise_sum(active) / static_cast<double>(active.size()));
    out.per_span_class.push_back(std::move(per_class));
  }
  out.mean = pairwise_sum(out.per_span) / static_cast<double>(out.per_span.size());
  return out;
}

/// Stuff-only video panoptic quality over several clips, in percent.
inline VpqResult vpq_s(std::span<const std::vector<LabelMap>> pred_clips, std::span<const std::vector<LabelMap>> gt_clips,
                       std::size_t num_classes, std::vector<int> spans) {
  detail::check_aligned(pred_clips.size(), gt_clips.size(), "vpq clips");
  if (spans.empty()) throw Error(ErrorKind::BadSpan, "no spans requested");
  VpqAccumulator acc(std::move(spans), num_classes);
  for (std::size_t i = 0; i < pred_clips.size(); ++i) accumulate_vpq(acc, pred_clips[i], gt_clips[i]);
  return finalize_vpq(acc);
}

inline VpqResult vpq_s(std::span<const LabelMap> preds, std::span<const LabelMap> gts, std::size_t num_classes,
                       std::vector<int> spans) {
  const std::vector<std::vector<LabelMap>> p{{preds.begin(), preds.end()}};
  const std::vector<std::vector<LabelMap>> g{{gts.begin(), gts.end()}};
  return vpq_s(std::span<const std::vector<LabelMap>>(p), std::span<const std::vector<LabelMap>>(g), num_classes, std::move(spans));
}

}  // namespace tubelabel

#endif  // TUBELABEL_METRICS_HPP
