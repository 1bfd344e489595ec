#ifndef SOFTPL_EVALUATOR_HPP
#define SOFTPL_EVALUATOR_HPP

// COCO-style box detection metrics.
//
// Follows the reference cocoeval conventions: IoU thresholds .50:.05:.95,
// 101-point interpolated precision, area buckets small < 32^2 <= medium < 96^2 <=
// large (bucket bounds inclusive on both sides), at most 100 detections per image
// and category, and classes without ground truth left out of the class mean.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "softpl/coco_io.hpp"
#include "softpl/errors.hpp"
#include "softpl/geometry.hpp"
#include "softpl/parallel.hpp"

namespace softpl {

inline constexpr std::size_t kNumIouThresholds = 10;
inline constexpr std::size_t kNumRecallPoints = 101;

/// 0.50, 0.55, ..., 0.95 (each the nearest double to the decimal value).
inline std::array<double, kNumIouThresholds> iou_thresholds() {
  std::array<double, kNumIouThresholds> t{};
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
  return t;
}

enum class AreaRange : std::size_t { all = 0, small = 1, medium = 2, large = 3 };

struct AreaBounds {
  double lo;
  double hi;
};

inline constexpr std::array<AreaBounds, 4> kAreaBounds{{
    {0.0, 1e10}, {0.0, 32.0 * 32.0}, {32.0 * 32.0, 96.0 * 96.0}, {96.0 * 96.0, 1e10}}};

struct EvalOptions {
  std::size_t max_dets = 100;
  unsigned threads = 1;
};

struct EvalResult {
  double map = 0.0;
  double map50 = 0.0;
  double map75 = 0.0;
  double map_small = 0.0;
  double map_medium = 0.0;
  double map_large = 0.0;
  /// AP@[.50:.95] per category, only for categories with at least one GT box.
  std::map<std::int64_t, double> per_class_ap;
  /// Class-mean AP at each IoU threshold (area "all").
  std::array<double, kNumIouThresholds> ap_by_threshold{};
};

namespace detail {

struct ImageCategoryEval {
  std::vector<double> scores;                                  // sorted desc
  std::array<std::vector<char>, kNumIouThresholds> matched;    // per threshold, per det
  std::array<std::vector<char>, kNumIouThresholds> ignored;    // per threshold, per det
  std::size_t num_gt = 0;                                      // non-ignored GT
};

inline ImageCategoryEval evaluate_image_category(std::span<const Annotation* const> gts,
                                                 std::span<const Detection* const> dts_in,
                                                 AreaBounds range, std::size_t max_dets,
                                                 const std::array<double, kNumIouThresholds>& thresholds) {
  ImageCategoryEval out;

  // Non-ignored GT first, stable.
  std::vector<const Annotation*> g(gts.begin(), gts.end());
  std::vector<char> g_ignore;
  auto outside = [&](double a) { return a < range.lo || a > range.hi; };
  std::stable_sort(g.begin(), g.end(), [&](const Annotation* a, const Annotation* b) {
    return !outside(a->effective_area()) && outside(b->effective_area());
  });
  for (const auto* a : g) {
    const bool ig = outside(a->effective_area());
    g_ignore.push_back(ig);
    if (!ig) ++out.num_gt;
  }

  std::vector<const Detection*> d(dts_in.begin(), dts_in.end());
  std::stable_sort(d.begin(), d.end(),
                   [](const Detection* a, const Detection* b) { return a->score > b->score; });
  if (d.size() > max_dets) d.resize(max_dets);
  for (const auto* x : d) out.scores.push_back(x->score);

  std::vector<std::vector<double>> ious(d.size(), std::vector<double>(g.size()));
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < g.size(); ++j) ious[i][j] = iou(d[i]->bbox, g[j]->bbox);

  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    std::vector<char> gt_taken(g.size(), 0);
    auto& dm = out.matched[t];
    auto& di = out.ignored[t];
    dm.assign(d.size(), 0);
    di.assign(d.size(), 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      double best = std::min(thresholds[t], 1.0 - 1e-10);
      std::ptrdiff_t m = -1;
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (gt_taken[j]) continue;
        // Once matched to a regular GT, stop before the ignored tail.
        if (m > -1 && !g_ignore[static_cast<std::size_t>(m)] && g_ignore[j]) break;
        if (ious[i][j] < best) continue;
        best = ious[i][j];
        m = static_cast<std::ptrdiff_t>(j);
      }
      if (m == -1) continue;
      gt_taken[static_cast<std::size_t>(m)] = 1;
      dm[i] = 1;
      di[i] = g_ignore[static_cast<std::size_t>(m)];
    }
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!dm[i] && outside(area(d[i]->bbox))) di[i] = 1;
  }
  return out;
}

/// 101-point interpolated AP from per-image results; -1 when there is no GT.
inline double accumulate_ap(const std::vector<const ImageCategoryEval*>& evals, std::size_t t) {
  std::size_t num_gt = 0;
  struct Entry {
    double score;
    char matched;
    char ignored;
  };
  std::vector<Entry> all;
  for (const auto* e : evals) {
    num_gt += e->num_gt;
    for (std::size_t i = 0; i < e->scores.size(); ++i)
      all.push_back({e->scores[i], e->matched[t][i], e->ignored[t][i]});
  }
  if (num_gt == 0) return -1.0;
  std::stable_sort(all.begin(), all.end(),
                   [](const Entry& a, const Entry& b) { return a.score > b.score; });

  std::vector<double> recall(all.size()), precision(all.size());
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (!all[i].ignored) {
      if (all[i].matched) tp += 1.0;
      else fp += 1.0;
    }
    recall[i] = tp / static_cast<double>(num_gt);
    precision[i] = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  }
  for (std::size_t i = all.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  for (std::size_t r = 0; r < kNumRecallPoints; ++r) {
    const double thr = static_cast<double>(r) / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), thr);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / static_cast<double>(kNumRecallPoints);
}

inline double mean_valid(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (x > -1.0) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

struct EvalIndex {
  std::vector<std::int64_t> image_ids;     // sorted
  std::vector<std::int64_t> category_ids;  // dataset order
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<const Annotation*>> gt;
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<const Detection*>> dt;
};

inline EvalIndex build_index(const CocoDataset& gt, std::span<const Detection> dets) {
  EvalIndex ix;
  std::unordered_set<std::int64_t> images, categories;
  for (const auto& img : gt.images) {
    ix.image_ids.push_back(img.id);
    images.insert(img.id);
  }
  std::sort(ix.image_ids.begin(), ix.image_ids.end());
  for (const auto& c : gt.categories) {
    ix.category_ids.push_back(c.id);
    categories.insert(c.id);
  }
  for (const auto& a : gt.annotations) {
    if (!images.count(a.image_id))
      throw UnknownImageError("ground truth references unknown image " + std::to_string(a.image_id));
    if (!categories.count(a.category_id))
      throw UnknownCategoryError("ground truth references unknown category " +
                                 std::to_string(a.category_id));
    ix.gt[{a.image_id, a.category_id}].push_back(&a);
  }
  for (const auto& d : dets) {
    if (!images.count(d.image_id))
      throw UnknownImageError("detection references unknown image " + std::to_string(d.image_id));
    if (!categories.count(d.category_id))
      throw UnknownCategoryError("detection references unknown category " +
                                 std::to_string(d.category_id));
    ix.dt[{d.image_id, d.category_id}].push_back(&d);
  }
  return ix;
}

} // namespace detail

inline EvalResult evaluate(const CocoDataset& gt, std::span<const Detection> dets,
                           const EvalOptions& options = {}) {
  const auto ix = detail::build_index(gt, dets);
  const auto thresholds = iou_thresholds();
  const std::size_t K = ix.category_ids.size();

  // ap[k][area][t]
  std::vector<std::array<std::array<double, kNumIouThresholds>, 4>> ap(K);
  parallel_for(K, options.threads, [&](std::size_t k) {
    const auto cat = ix.category_ids[k];
    for (std::size_t a = 0; a < kAreaBounds.size(); ++a) {
      std::vector<detail::ImageCategoryEval> per_image;
      per_image.reserve(ix.image_ids.size());
      for (const auto img : ix.image_ids) {
        static const std::vector<const Annotation*> no_gt;
        static const std::vector<const Detection*> no_dt;
        const auto git = ix.gt.find({img, cat});
        const auto dit = ix.dt.find({img, cat});
        const auto& g = git != ix.gt.end() ? git->second : no_gt;
        const auto& d = dit != ix.dt.end() ? dit->second : no_dt;
        if (g.empty() && d.empty()) continue;
        per_image.push_back(detail::evaluate_image_category(g, d, kAreaBounds[a], options.max_dets,
                                                            thresholds));
      }
      std::vector<const detail::ImageCategoryEval*> ptrs;
      for (const auto& e : per_image) ptrs.push_back(&e);
      for (std::size_t t = 0; t < kNumIouThresholds; ++t) ap[k][a][t] = detail::accumulate_ap(ptrs, t);
    }
  });

  EvalResult r;
  auto area_mean = [&](std::size_t a) {
    std::vector<double> v;
    for (std::size_t k = 0; k < K; ++k)
      for (double x : ap[k][a]) v.push_back(x);
    return detail::mean_valid(v);
  };
  auto threshold_mean = [&](std::size_t t) {
    std::vector<double> v;
    for (std::size_t k = 0; k < K; ++k) v.push_back(ap[k][0][t]);
    return detail::mean_valid(v);
  };
  r.map = area_mean(0);
  r.map_small = area_mean(1);
  r.map_medium = area_mean(2);
  r.map_large = area_mean(3);
  for (std::size_t t = 0; t < kNumIouThresholds; ++t) r.ap_by_threshold[t] = threshold_mean(t);
  r.map50 = r.ap_by_threshold[0];
  r.map75 = r.ap_by_threshold[5];
  for (std::size_t k = 0; k < K; ++k)
    if (ap[k][0][0] > -1.0) {
      std::vector<double> v(ap[k][0].begin(), ap[k][0].end());
      r.per_class_ap[ix.category_ids[k]] = detail::mean_valid(v);
    }
  return r;
}

/// Evaluates a dataset of (pseudo-)annotations as detections, using each
/// annotation's confidence as its score.
inline std::vector<Detection> annotations_as_detections(const CocoDataset& d,
                                                        const std::string& model_id = "dataset") {
  std::vector<Detection> out;
  out.reserve(d.annotations.size());
  for (const auto& a : d.annotations)
    out.push_back({a.image_id, a.category_id, a.bbox, a.confidence(), model_id});
  return out;
}

/// Rows are ground-truth classes, columns predicted classes; the last row/column
/// is background.
struct ConfusionMatrix {
  std::vector<std::int64_t> category_ids;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t background() const noexcept { return category_ids.size(); }

  /// Each row scaled to percentages of its total (all-zero rows stay zero).
  std::vector<std::vector<double>> row_percentages() const {
    std::vector<std::vector<double>> out(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double total = static_cast<double>(
          std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0}));
      out[i].resize(counts[i].size(), 0.0);
      if (total > 0.0)
        for (std::size_t j = 0; j < counts[i].size(); ++j)
          out[i][j] = 100.0 * static_cast<double>(counts[i][j]) / total;
    }
    return out;
  }
};

/// Class-agnostic one-to-one matching: detections at or above score_thresh, in
/// score order, take the unmatched GT with the highest IoU >= iou_thresh.
inline ConfusionMatrix confusion_matrix(const CocoDataset& gt, std::span<const Detection> dets,
                                        double iou_thresh, double score_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0) || !(score_thresh > 0.0 && score_thresh < 1.0))
    throw ConfigError("confusion thresholds must lie in (0,1)");
  const auto ix = detail::build_index(gt, dets);
  ConfusionMatrix cm;
  cm.category_ids = ix.category_ids;
  const std::size_t K = cm.category_ids.size();
  cm.counts.assign(K + 1, std::vector<std::size_t>(K + 1, 0));
  std::unordered_map<std::int64_t, std::size_t> slot;
  for (std::size_t k = 0; k < K; ++k) slot[cm.category_ids[k]] = k;

  std::map<std::int64_t, std::vector<const Annotation*>> gt_by_image;
  std::map<std::int64_t, std::vector<const Detection*>> dt_by_image;
  for (const auto& a : gt.annotations) gt_by_image[a.image_id].push_back(&a);
  for (const auto& d : dets)
    if (d.score >= score_thresh) dt_by_image[d.image_id].push_back(&d);

  for (const auto img : ix.image_ids) {
    auto& g = gt_by_image[img];
    auto& d = dt_by_image[img];
    std::stable_sort(d.begin(), d.end(),
                     [](const Detection* a, const Detection* b) { return a->score > b->score; });
    std::vector<char> taken(g.size(), 0);
    for (const auto* det : d) {
      std::ptrdiff_t best = -1;
      double best_iou = iou_thresh;
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (taken[j]) continue;
        const double v = iou(det->bbox, g[j]->bbox);
        if (v >= best_iou && (best == -1 || v > best_iou)) {
          best_iou = v;
          best = static_cast<std::ptrdiff_t>(j);
        }
      }
      const std::size_t pred = slot.at(det->category_id);
      if (best == -1) {
        ++cm.counts[K][pred];
      } else {
        taken[static_cast<std::size_t>(best)] = 1;
        ++cm.counts[slot.at(g[static_cast<std::size_t>(best)]->category_id)][pred];
      }
    }
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!taken[j]) ++cm.counts[slot.at(g[j]->category_id)][K];
  }
  return cm;
}

} // namespace softpl

#endif // SOFTPL_EVALUATOR_HPP
