#ifndef SOFTPL_FUSION_CORE_HPP
#define SOFTPL_FUSION_CORE_HPP

#include <algorithm>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "softpl/coco_io.hpp"
#include "softpl/errors.hpp"
#include "softpl/geometry.hpp"

namespace softpl {

/// Category-homogeneous group of overlapping detections on one image.
/// `members.front()` is the reference (seed) detection, which has the highest score.
struct Cluster {
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  std::vector<Detection> members;
  std::set<std::string> model_set;

  const Detection& reference() const { return members.front(); }
  std::size_t num_models() const noexcept { return model_set.size(); }
};

/// Processing order for clustering: score desc, then model_id asc, then input index.
inline std::vector<std::size_t> confidence_order(std::span<const Detection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].model_id < dets[b].model_id;
  });
  return order;
}

/// Greedy IoU clustering against each cluster's reference box.
///
/// Detections are visited in confidence order; each joins the first cluster (in
/// creation order) whose reference has IoU >= theta with it, otherwise it seeds a
/// new cluster. All detections must share one image_id and one category_id.
inline std::vector<Cluster> cluster_detections(std::span<const Detection> dets, double theta) {
  std::vector<Cluster> clusters;
  if (dets.empty()) return clusters;
  const auto image_id = dets.front().image_id;
  const auto category_id = dets.front().category_id;
  for (const auto& d : dets)
    if (d.image_id != image_id || d.category_id != category_id)
      throw MixedKeyError("cluster_detections: detections span several (image, category) keys");

  for (std::size_t idx : confidence_order(dets)) {
    const Detection& d = dets[idx];
    auto home = std::find_if(clusters.begin(), clusters.end(), [&](const Cluster& c) {
      return iou(c.reference().bbox, d.bbox) >= theta;
    });
    if (home == clusters.end()) {
      Cluster c;
      c.image_id = image_id;
      c.category_id = category_id;
      clusters.push_back(std::move(c));
      home = std::prev(clusters.end());
    }
    home->members.push_back(d);
    home->model_set.insert(d.model_id);
  }
  return clusters;
}

/// Score-weighted average of member boxes, coordinate-wise in corner form.
inline BBox fuse_cluster(const Cluster& c) {
  double total = 0.0;
  for (const auto& m : c.members) total += m.score;
  if (c.members.empty() || !(total > 0.0))
    throw DegenerateWeightError("fuse_cluster: member scores sum to zero");
  BBox out;
  for (const auto& m : c.members) {
    const double w = m.score / total;
    out.x_min += w * m.bbox.x_min;
    out.y_min += w * m.bbox.y_min;
    out.x_max += w * m.bbox.x_max;
    out.y_max += w * m.bbox.y_max;
  }
  // Rounding can push a coordinate a hair outside the members' hull.
  auto hull = [&](auto field, double v) {
    double lo = c.members.front().bbox.*field, hi = lo;
    for (const auto& m : c.members) {
      lo = std::min(lo, m.bbox.*field);
      hi = std::max(hi, m.bbox.*field);
    }
    return std::clamp(v, lo, hi);
  };
  out.x_min = hull(&BBox::x_min, out.x_min);
  out.y_min = hull(&BBox::y_min, out.y_min);
  out.x_max = std::max(hull(&BBox::x_max, out.x_max), out.x_min);
  out.y_max = std::max(hull(&BBox::y_max, out.y_max), out.y_min);
  return out;
}

/// 1 - mean IoU between every member and the fused box (mean over cluster size).
inline double cluster_spread(const Cluster& c, const BBox& fused) {
  if (c.members.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& m : c.members) sum += iou(m.bbox, fused);
  return std::clamp(1.0 - sum / static_cast<double>(c.members.size()), 0.0, 1.0);
}

/// Highest member score.
inline double base_score(const Cluster& c) {
  double best = 0.0;
  for (const auto& m : c.members) best = std::max(best, m.score);
  return best;
}

} // namespace softpl

#endif // SOFTPL_FUSION_CORE_HPP
