#ifndef SOFTPL_SIMULATOR_HPP
#define SOFTPL_SIMULATOR_HPP

// Synthetic ground truth plus K noisy "detectors" for GPU-free validation of the
// fusion pipeline. Each image draws from its own stream derived from
// (seed, image_id), so the output does not depend on the thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "softpl/coco_io.hpp"
#include "softpl/errors.hpp"
#include "softpl/geometry.hpp"
#include "softpl/parallel.hpp"
#include "softpl/random.hpp"

namespace softpl {

struct SimCategory {
  std::int64_t id = 0;
  std::string name;
  double weight = 0.0;
};

/// Four-class material mix with the heavy cardboard skew of real MRF footage
/// (cardboard above 66%, metal below 2%).
inline std::vector<SimCategory> default_sim_categories() {
  return {{1, "rigid_plastic", 0.095}, {2, "cardboard", 0.67}, {3, "metal", 0.015},
          {4, "soft_plastic", 0.22}};
}

struct ScoreModel {
  double tp_mean = 0.75;
  double tp_sigma = 0.1;
  double fp_mean = 0.35;
  double fp_sigma = 0.1;
};

struct SimConfig {
  std::uint64_t seed = 42;
  int num_images = 50;
  int image_width = 640;
  int image_height = 480;
  int min_boxes = 3;
  int max_boxes = 12;
  double min_box_size = 24.0;
  double max_box_size = 160.0;
  /// GT boxes overlapping an earlier GT box above this IoU are redrawn.
  double max_gt_iou = 0.5;
  std::vector<SimCategory> categories = default_sim_categories();
  int num_models = 3;
  double jitter_sigma = 4.0;
  double detect_prob = 0.85;
  double false_positive_rate = 1.0;
  ScoreModel scores;

  void validate() const {
    if (num_images < 0) throw ConfigError("num_images must be >= 0");
    if (image_width <= 0 || image_height <= 0) throw ConfigError("image size must be positive");
    if (min_boxes < 0 || max_boxes < min_boxes) throw ConfigError("need 0 <= min_boxes <= max_boxes");
    if (!(min_box_size > 0.0) || max_box_size < min_box_size)
      throw ConfigError("need 0 < min_box_size <= max_box_size");
    if (!(max_gt_iou > 0.0 && max_gt_iou <= 1.0)) throw ConfigError("max_gt_iou must lie in (0,1]");
    if (categories.empty()) throw ConfigError("at least one category is required");
    double total = 0.0;
    for (const auto& c : categories) {
      if (!(c.weight >= 0.0 && c.weight <= 1.0)) throw ConfigError("class weights must lie in [0,1]");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("class weights must sum to 1");
    if (num_models < 1) throw ConfigError("num_models must be >= 1");
    if (!(jitter_sigma >= 0.0) || !std::isfinite(jitter_sigma)) throw ConfigError("jitter sigma must be >= 0");
    if (!(detect_prob >= 0.0 && detect_prob <= 1.0)) throw ConfigError("detect_prob must lie in [0,1]");
    if (!(false_positive_rate >= 0.0) || !std::isfinite(false_positive_rate))
      throw ConfigError("false positive rate must be >= 0");
    if (!(scores.tp_sigma >= 0.0) || !(scores.fp_sigma >= 0.0))
      throw ConfigError("score sigmas must be >= 0");
  }
};

/// Moderate-noise preset used by the acceptance suite and the README.
inline SimConfig noisy_preset() {
  SimConfig c;
  c.seed = 20240917;
  c.num_images = 200;
  c.num_models = 4;
  c.jitter_sigma = 3.0;
  c.detect_prob = 0.8;
  c.false_positive_rate = 2.0;
  return c;
}

inline std::string sim_model_id(int k) { return "model_" + std::to_string(k + 1); }

struct SimOutput {
  CocoDataset ground_truth;
  std::map<std::string, std::vector<Detection>> per_model_detections;
};

namespace detail {

inline std::int64_t draw_category(Rng& rng, const std::vector<SimCategory>& cats) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (const auto& c : cats) {
    acc += c.weight;
    if (u < acc) return c.id;
  }
  return cats.back().id;
}

inline BBox draw_box(Rng& rng, const SimConfig& c) {
  const double w = rng.uniform(c.min_box_size, c.max_box_size);
  const double h = rng.uniform(c.min_box_size, c.max_box_size);
  const double cx = rng.uniform(0.0, c.image_width);
  const double cy = rng.uniform(0.0, c.image_height);
  return clip(BBox{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}, c.image_width, c.image_height);
}

inline BBox jitter(Rng& rng, const BBox& b, const SimConfig& c) {
  double x0 = b.x_min + c.jitter_sigma * rng.normal();
  double y0 = b.y_min + c.jitter_sigma * rng.normal();
  double x1 = b.x_max + c.jitter_sigma * rng.normal();
  double y1 = b.y_max + c.jitter_sigma * rng.normal();
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  return clip(BBox{x0, y0, x1, y1}, c.image_width, c.image_height);
}

inline double draw_score(Rng& rng, double mean, double sigma) {
  return std::clamp(rng.normal(mean, sigma), 0.0, 1.0);
}

struct SimImage {
  std::vector<Annotation> gt;
  std::vector<std::vector<Detection>> per_model;
};

inline SimImage simulate_image(const SimConfig& c, std::int64_t image_id) {
  Rng rng(derive_seed(c.seed, static_cast<std::uint64_t>(image_id)));
  SimImage out;
  const auto n = rng.uniform_int(c.min_boxes, c.max_boxes);
  constexpr int kMaxAttempts = 100;
  for (std::int64_t i = 0; i < n; ++i) {
    Annotation a;
    a.image_id = image_id;
    a.category_id = draw_category(rng, c.categories);
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      a.bbox = draw_box(rng, c);
      placed = std::none_of(out.gt.begin(), out.gt.end(), [&](const Annotation& g) {
        return iou(g.bbox, a.bbox) > c.max_gt_iou;
      });
    }
    if (!placed) continue;
    a.area = area(a.bbox);
    out.gt.push_back(a);
  }
  out.per_model.resize(static_cast<std::size_t>(c.num_models));
  for (int k = 0; k < c.num_models; ++k) {
    auto& dets = out.per_model[static_cast<std::size_t>(k)];
    const std::string model = sim_model_id(k);
    for (const auto& g : out.gt) {
      if (!rng.bernoulli(c.detect_prob)) continue;
      const BBox b = jitter(rng, g.bbox, c);
      const double s = draw_score(rng, c.scores.tp_mean, c.scores.tp_sigma);
      dets.push_back({image_id, g.category_id, b, s, model});
    }
    const auto fps = rng.poisson(c.false_positive_rate);
    for (std::int64_t i = 0; i < fps; ++i) {
      const auto cat = draw_category(rng, c.categories);
      const BBox b = draw_box(rng, c);
      const double s = draw_score(rng, c.scores.fp_mean, c.scores.fp_sigma);
      dets.push_back({image_id, cat, b, s, model});
    }
  }
  return out;
}

} // namespace detail

inline SimOutput generate(const SimConfig& config, unsigned threads = 1) {
  config.validate();
  std::vector<detail::SimImage> images(static_cast<std::size_t>(config.num_images));
  parallel_for(images.size(), threads, [&](std::size_t i) {
    images[i] = detail::simulate_image(config, static_cast<std::int64_t>(i) + 1);
  });

  SimOutput out;
  for (const auto& c : config.categories) out.ground_truth.categories.push_back({c.id, c.name});
  for (int k = 0; k < config.num_models; ++k) out.per_model_detections[sim_model_id(k)];
  std::int64_t next_id = 1;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto image_id = static_cast<std::int64_t>(i) + 1;
    out.ground_truth.images.push_back(
        {image_id, config.image_width, config.image_height, "sim_" + std::to_string(image_id) + ".png"});
    for (auto a : images[i].gt) {
      a.id = next_id++;
      out.ground_truth.annotations.push_back(std::move(a));
    }
    for (int k = 0; k < config.num_models; ++k) {
      auto& dst = out.per_model_detections[sim_model_id(k)];
      const auto& src = images[i].per_model[static_cast<std::size_t>(k)];
      dst.insert(dst.end(), src.begin(), src.end());
    }
  }
  return out;
}

/// Writes gt.json and det_<model_id>.json into `dir`; returns the detection paths.
inline std::vector<std::filesystem::path> write_simulation(const SimOutput& sim,
                                                           const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string());
  write_pseudo_labels(sim.ground_truth, dir / "gt.json");
  std::vector<std::filesystem::path> paths;
  for (const auto& [model, dets] : sim.per_model_detections) {
    auto p = dir / ("det_" + model + ".json");
    write_detections(dets, p);
    paths.push_back(std::move(p));
  }
  return paths;
}

struct LabelQuality {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

/// One-to-one, class-aware greedy matching: predictions in confidence order take
/// the unmatched same-class GT box with the highest IoU >= iou_thresh.
inline LabelQuality score_predictions(const CocoDataset& gt, std::span<const Detection> preds,
                                      double iou_thresh) {
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<const Annotation*>> gts;
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<const Detection*>> pds;
  for (const auto& a : gt.annotations) gts[{a.image_id, a.category_id}].push_back(&a);
  for (const auto& d : preds) pds[{d.image_id, d.category_id}].push_back(&d);

  LabelQuality q;
  for (auto& [key, list] : pds) {
    std::stable_sort(list.begin(), list.end(),
                     [](const Detection* a, const Detection* b) { return a->score > b->score; });
    auto git = gts.find(key);
    std::vector<char> taken(git != gts.end() ? git->second.size() : 0, 0);
    for (const auto* d : list) {
      std::ptrdiff_t best = -1;
      double best_iou = iou_thresh;
      for (std::size_t j = 0; j < taken.size(); ++j) {
        if (taken[j]) continue;
        const double v = iou(d->bbox, git->second[j]->bbox);
        if (v >= best_iou && (best == -1 || v > best_iou)) {
          best = static_cast<std::ptrdiff_t>(j);
          best_iou = v;
        }
      }
      if (best == -1) {
        ++q.false_positives;
      } else {
        taken[static_cast<std::size_t>(best)] = 1;
        ++q.true_positives;
      }
    }
  }
  const std::size_t num_gt = gt.annotations.size();
  q.false_negatives = num_gt - q.true_positives;
  const double tp = static_cast<double>(q.true_positives);
  if (q.true_positives + q.false_positives > 0)
    q.precision = tp / static_cast<double>(q.true_positives + q.false_positives);
  if (num_gt > 0) q.recall = tp / static_cast<double>(num_gt);
  if (q.precision + q.recall > 0.0) q.f1 = 2.0 * q.precision * q.recall / (q.precision + q.recall);
  return q;
}

inline LabelQuality score_pseudo_labels(const CocoDataset& gt, const CocoDataset& pseudo,
                                        double iou_thresh) {
  std::vector<Detection> preds;
  preds.reserve(pseudo.annotations.size());
  for (const auto& a : pseudo.annotations)
    preds.push_back({a.image_id, a.category_id, a.bbox, a.confidence(), "pseudo"});
  return score_predictions(gt, preds, iou_thresh);
}

} // namespace softpl

#endif // SOFTPL_SIMULATOR_HPP
