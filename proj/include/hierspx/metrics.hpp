#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hierspx/error.hpp"
#include "hierspx/grid.hpp"

namespace hierspx {

namespace detail {

inline void check_same_dims(const LabelMap& a, const LabelMap& b,
                            const char* op) {
  if (a.dims() != b.dims())
    throw InvalidInput(std::string(op) + ": dimension mismatch " +
                       to_string(a.dims()) + " vs " + to_string(b.dims()));
}

// Sparse contingency table between two label maps.
struct Overlap {
  std::unordered_map<std::uint32_t, std::size_t> pred_size;
  std::unordered_map<std::uint32_t, std::unordered_map<std::uint32_t, std::size_t>>
      by_pred;  // pred -> gt -> |S ∩ G|
};

inline Overlap overlap(const LabelMap& pred, const LabelMap& gt) {
  Overlap o;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++o.pred_size[pred[i]];
    ++o.by_pred[pred[i]][gt[i]];
  }
  return o;
}

// Majority gt label of each superpixel; ties go to the smaller gt label.
inline std::unordered_map<std::uint32_t, std::uint32_t> majority_gt(
    const Overlap& o) {
  std::unordered_map<std::uint32_t, std::uint32_t> out;
  for (const auto& [s, row] : o.by_pred) {
    std::uint32_t best = 0;
    std::size_t best_n = 0;
    bool first = true;
    for (const auto& [g, n] : row)
      if (first || n > best_n || (n == best_n && g < best)) {
        best = g;
        best_n = n;
        first = false;
      }
    out[s] = best;
  }
  return out;
}

// Square max filter of radius r over a 0/1 mask (separable).
inline std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& mask,
                                        Dims d, std::size_t r) {
  if (r == 0) return mask;
  std::vector<std::uint8_t> tmp(mask.size(), 0), out(mask.size(), 0);
  for (std::size_t h = 0; h < d.height; ++h)
    for (std::size_t w = 0; w < d.width; ++w) {
      if (!mask[h * d.width + w]) continue;
      std::size_t w0 = w >= r ? w - r : 0, w1 = std::min(d.width - 1, w + r);
      for (std::size_t x = w0; x <= w1; ++x) tmp[h * d.width + x] = 1;
    }
  for (std::size_t h = 0; h < d.height; ++h)
    for (std::size_t w = 0; w < d.width; ++w) {
      if (!tmp[h * d.width + w]) continue;
      std::size_t h0 = h >= r ? h - r : 0, h1 = std::min(d.height - 1, h + r);
      for (std::size_t y = h0; y <= h1; ++y) out[y * d.width + w] = 1;
    }
  return out;
}

}  // namespace detail

// A pixel is on a boundary iff one of its 4-neighbours carries another label.
inline std::vector<std::uint8_t> boundary_mask(const LabelMap& labels) {
  Dims d = labels.dims();
  std::vector<std::uint8_t> mask(labels.size(), 0);
  for (std::size_t h = 0; h < d.height; ++h)
    for (std::size_t w = 0; w < d.width; ++w) {
      std::uint32_t v = labels.at(h, w);
      bool edge = (h > 0 && labels.at(h - 1, w) != v) ||
                  (h + 1 < d.height && labels.at(h + 1, w) != v) ||
                  (w > 0 && labels.at(h, w - 1) != v) ||
                  (w + 1 < d.width && labels.at(h, w + 1) != v);
      mask[h * d.width + w] = edge ? 1 : 0;
    }
  return mask;
}

// Achievable segmentation accuracy: fraction of pixels labelled correctly when
// every superpixel takes its majority ground-truth label.
inline double asa(const LabelMap& pred, const LabelMap& gt) {
  detail::check_same_dims(pred, gt, "asa");
  if (pred.size() == 0) return 1.0;
  auto o = detail::overlap(pred, gt);
  std::size_t hit = 0;
  for (const auto& [s, row] : o.by_pred) {
    std::size_t best = 0;
    for (const auto& [g, n] : row) best = std::max(best, n);
    hit += best;
  }
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Fraction of ground-truth boundary pixels with a predicted boundary pixel
// within Chebyshev distance `tolerance`. 1.0 when gt has no boundary.
inline double boundary_recall(const LabelMap& pred, const LabelMap& gt,
                              std::size_t tolerance = 2) {
  detail::check_same_dims(pred, gt, "boundary_recall");
  auto gb = boundary_mask(gt);
  auto pb = detail::dilate(boundary_mask(pred), pred.dims(), tolerance);
  std::size_t total = 0, hit = 0;
  for (std::size_t i = 0; i < gb.size(); ++i)
    if (gb[i]) {
      ++total;
      hit += pb[i];
    }
  if (total == 0) return 1.0;
  return static_cast<double>(hit) / static_cast<double>(total);
}

// Boundary F-score: harmonic mean of boundary precision and recall at the
// given tolerance. 1.0 when neither map has a boundary.
inline double boundary_f_score(const LabelMap& pred, const LabelMap& gt,
                               std::size_t tolerance = 1) {
  detail::check_same_dims(pred, gt, "boundary_f_score");
  auto gb = boundary_mask(gt);
  auto pb = boundary_mask(pred);
  auto gd = detail::dilate(gb, gt.dims(), tolerance);
  auto pd = detail::dilate(pb, pred.dims(), tolerance);
  std::size_t g_total = 0, g_hit = 0, p_total = 0, p_hit = 0;
  for (std::size_t i = 0; i < gb.size(); ++i) {
    if (gb[i]) { ++g_total; g_hit += pd[i]; }
    if (pb[i]) { ++p_total; p_hit += gd[i]; }
  }
  if (g_total == 0 && p_total == 0) return 1.0;
  if (g_total == 0 || p_total == 0) return 0.0;
  double r = static_cast<double>(g_hit) / static_cast<double>(g_total);
  double p = static_cast<double>(p_hit) / static_cast<double>(p_total);
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

struct Undersegmentation {
  double value = 0.0;
  // 1 where a pixel lies outside its superpixel's majority gt region.
  std::vector<std::uint8_t> leakage;
};

// (1/N) sum over gt regions G and overlapping superpixels S of
// min(|S ∩ G|, |S \ G|).
inline Undersegmentation undersegmentation_error(const LabelMap& pred,
                                                 const LabelMap& gt) {
  detail::check_same_dims(pred, gt, "undersegmentation_error");
  Undersegmentation out{0.0, std::vector<std::uint8_t>(pred.size(), 0)};
  if (pred.size() == 0) return out;
  auto o = detail::overlap(pred, gt);
  std::size_t total = 0;
  for (const auto& [s, row] : o.by_pred) {
    std::size_t size = o.pred_size.at(s);
    for (const auto& [g, n] : row) total += std::min(n, size - n);
  }
  out.value = static_cast<double>(total) / static_cast<double>(pred.size());
  auto major = detail::majority_gt(o);
  for (std::size_t i = 0; i < pred.size(); ++i)
    out.leakage[i] = gt[i] != major.at(pred[i]) ? 1 : 0;
  return out;
}

struct ClassScores {
  double miou = 0.0;
  double pixel_acc = 0.0;
  std::vector<double> iou;  // per class; -1 for classes absent from both maps
};

// Row = gt class, column = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes)
      : classes_(classes), counts_(classes * classes, 0) {}

  void add(const LabelMap& pred, const LabelMap& gt) {
    detail::check_same_dims(pred, gt, "confusion matrix");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] >= classes_ || gt[i] >= classes_)
        throw InvalidInput("confusion matrix: label " +
                           std::to_string(std::max(pred[i], gt[i])) +
                           " >= class count " + std::to_string(classes_));
      ++counts_[gt[i] * classes_ + pred[i]];
    }
  }

  std::size_t classes() const noexcept { return classes_; }
  std::size_t at(std::size_t g, std::size_t p) const noexcept {
    return counts_[g * classes_ + p];
  }

  // IoU averaged over classes present in gt or pred.
  ClassScores scores() const {
    ClassScores s;
    s.iou.assign(classes_, -1.0);
    std::size_t total = 0, diag = 0, present = 0;
    double iou_sum = 0.0;
    for (std::size_t c = 0; c < classes_; ++c) {
      std::size_t tp = at(c, c), row = 0, col = 0;
      for (std::size_t k = 0; k < classes_; ++k) {
        row += at(c, k);
        col += at(k, c);
      }
      total += row;
      diag += tp;
      std::size_t uni = row + col - tp;
      if (uni == 0) continue;
      s.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
      iou_sum += s.iou[c];
      ++present;
    }
    s.miou = present ? iou_sum / static_cast<double>(present) : 1.0;
    s.pixel_acc = total ? static_cast<double>(diag) / static_cast<double>(total) : 1.0;
    return s;
  }

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

inline ClassScores miou_pixacc(const LabelMap& pred, const LabelMap& gt,
                               std::size_t classes) {
  ConfusionMatrix cm(classes);
  cm.add(pred, gt);
  return cm.scores();
}

struct MetricReport {
  double asa = 0.0;
  double br = 0.0;
  double ue = 0.0;
  std::vector<std::uint8_t> leakage;
  double miou = 0.0;
  double pixel_acc = 0.0;
};

inline MetricReport evaluate_labels(const LabelMap& pred, const LabelMap& gt,
                                    std::size_t br_tolerance = 2) {
  MetricReport r;
  r.asa = asa(pred, gt);
  r.br = boundary_recall(pred, gt, br_tolerance);
  auto ue = undersegmentation_error(pred, gt);
  r.ue = ue.value;
  r.leakage = std::move(ue.leakage);
  auto cls = miou_pixacc(pred, gt, std::max(pred.label_bound(), gt.label_bound()));
  r.miou = cls.miou;
  r.pixel_acc = cls.pixel_acc;
  return r;
}

}  // namespace hierspx
