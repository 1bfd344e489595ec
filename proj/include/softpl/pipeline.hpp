#ifndef SOFTPL_PIPELINE_HPP
#define SOFTPL_PIPELINE_HPP

// Ensemble soft pseudo-labeling over a whole dataset:
// filter -> group by (image, category) -> cluster -> model-agreement gate ->
// fuse -> score -> threshold -> clip -> emit.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "softpl/coco_io.hpp"
#include "softpl/errors.hpp"
#include "softpl/fusion_core.hpp"
#include "softpl/parallel.hpp"
#include "softpl/soft_scoring.hpp"

namespace softpl {

struct FusionConfig {
  double tau_initial = 0.35;  // pre-clustering confidence filter
  double theta = 0.65;        // IoU threshold against the cluster reference
  int min_models = 2;         // distinct models a cluster needs
  double tau_final = 0.35;    // threshold on the final score
  double alpha = 5.0;         // spread decay
  double beta = 0.1;          // agreement bonus per model beyond two
  double p = 2.0;             // training-weight exponent
  ScoreMode mode = ScoreMode::soft;

  ScoringParams scoring() const { return {alpha, beta, p, mode}; }

  void validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(tau_initial) || tau_initial < 0.0 || tau_initial > 1.0)
      throw ConfigError("tau_initial must lie in [0,1]");
    if (!finite(theta) || theta <= 0.0 || theta > 1.0) throw ConfigError("theta must lie in (0,1]");
    if (min_models < 1) throw ConfigError("min_models must be >= 1");
    if (!finite(tau_final) || tau_final < 0.0 || tau_final > 1.0)
      throw ConfigError("tau_final must lie in [0,1]");
    if (!finite(alpha) || alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (!finite(beta) || beta < 0.0) throw ConfigError("beta must be >= 0");
    if (!finite(p) || p < 0.0) throw ConfigError("p must be >= 0");
    if (!(1.0 + beta * (min_models - 2) > 0.0))
      throw ConfigError("beta too large for min_models: consensus bracket would be <= 0");
  }

  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

/// Threshold used for the released annotation set.
inline constexpr double kReleaseTauFinal = 0.4;

inline FusionConfig release_config(FusionConfig base = {}) {
  base.tau_final = kReleaseTauFinal;
  return base;
}

inline ScoreMode parse_score_mode(const std::string& s) {
  if (s == "soft") return ScoreMode::soft;
  if (s == "hard") return ScoreMode::hard;
  throw ConfigError("mode must be \"soft\" or \"hard\", got \"" + s + "\"");
}

inline Json to_json(const FusionConfig& c) {
  return Json{{"tau", c.tau_initial},  {"theta", c.theta}, {"min_models", c.min_models},
              {"tau_final", c.tau_final}, {"alpha", c.alpha}, {"beta", c.beta},
              {"p", c.p},                 {"mode", to_string(c.mode)}};
}

/// Reads a config object; absent keys keep their defaults, unknown keys are ignored.
inline FusionConfig fusion_config_from_json(const Json& j, FusionConfig c = {}) {
  if (!j.is_object()) throw ConfigError("fusion config must be a JSON object");
  auto num = [&](const char* key, double& field) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_number()) throw ConfigError(std::string("config \"") + key + "\" must be a number");
      field = it->get<double>();
    }
  };
  num("tau", c.tau_initial);
  num("theta", c.theta);
  num("tau_final", c.tau_final);
  num("alpha", c.alpha);
  num("beta", c.beta);
  num("p", c.p);
  if (auto it = j.find("min_models"); it != j.end()) {
    if (!it->is_number_integer()) throw ConfigError("config \"min_models\" must be an integer");
    c.min_models = it->get<int>();
  }
  if (auto it = j.find("mode"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config \"mode\" must be a string");
    c.mode = parse_score_mode(it->get<std::string>());
  }
  c.validate();
  return c;
}

/// Default fusion parameters plus the release threshold, as JSON.
inline Json defaults_json() {
  return Json{{"fuse", to_json(FusionConfig{})}, {"release_preset", {{"tau_final", kReleaseTauFinal}}}};
}

inline std::string print_defaults() { return defaults_json().dump(2) + "\n"; }

struct PipelineOptions {
  unsigned threads = 1;
  bool keep_empty_images = true;
};

struct DetectionSource {
  std::filesystem::path path;
  std::string model_id;
};

namespace detail {

using GroupKey = std::pair<std::int64_t, std::int64_t>;  // (image_id, category_id)

inline Annotation to_annotation(const FusedBox& f, const ImageRecord& img) {
  Annotation a;
  a.image_id = f.image_id;
  a.category_id = f.category_id;
  a.bbox = clip(f.bbox, img.width, img.height);
  a.area = softpl::area(a.bbox);
  a.score = f.s_base;
  SoftFields s;
  s.soft_score = f.soft_score;
  s.spread = f.spread;
  s.consensus_factor = f.consensus_factor;
  s.train_weight = f.train_weight;
  s.source_models.assign(f.source_models.begin(), f.source_models.end());
  s.num_models = static_cast<int>(f.source_models.size());
  a.soft = std::move(s);
  return a;
}

} // namespace detail

/// Clusters, fuses and scores one (image, category) group; returns accepted boxes
/// before clipping.
inline std::vector<FusedBox> fuse_group(std::span<const Detection> group, const FusionConfig& config) {
  std::vector<FusedBox> out;
  const auto params = config.scoring();
  for (const auto& cluster : cluster_detections(group, config.theta)) {
    if (cluster.num_models() < static_cast<std::size_t>(config.min_models)) continue;
    FusedBox f = score_cluster(cluster, params);
    if (f.soft_score >= config.tau_final) out.push_back(std::move(f));
  }
  return out;
}

/// Runs the full pseudo-labeling pass over in-memory detections. Output is
/// identical for every thread count.
inline CocoDataset fuse_detections(std::span<const Detection> detections,
                                   const std::vector<ImageRecord>& images,
                                   const std::vector<CategoryRecord>& categories,
                                   const FusionConfig& config, const PipelineOptions& options = {}) {
  config.validate();
  std::unordered_map<std::int64_t, const ImageRecord*> image_index;
  for (const auto& img : images)
    if (!image_index.emplace(img.id, &img).second) throw DuplicateIdError(img.id);
  std::unordered_set<std::int64_t> category_ids;
  for (const auto& c : categories)
    if (!category_ids.insert(c.id).second) throw DuplicateIdError(c.id);

  std::map<detail::GroupKey, std::vector<Detection>> groups;
  for (const auto& d : detections) {
    if (!image_index.count(d.image_id))
      throw UnknownImageError("detection from " + d.model_id + " references unknown image " +
                              std::to_string(d.image_id));
    if (!category_ids.count(d.category_id))
      throw UnknownCategoryError("detection from " + d.model_id + " references unknown category " +
                                 std::to_string(d.category_id));
    if (d.score >= config.tau_initial) groups[{d.image_id, d.category_id}].push_back(d);
  }

  std::vector<const std::vector<Detection>*> work;
  work.reserve(groups.size());
  for (const auto& [key, dets] : groups) work.push_back(&dets);
  std::vector<std::vector<FusedBox>> results(work.size());
  parallel_for(work.size(), options.threads,
               [&](std::size_t i) { results[i] = fuse_group(*work[i], config); });

  CocoDataset out;
  out.categories = categories;
  for (const auto& r : results)
    for (const auto& f : r) out.annotations.push_back(detail::to_annotation(f, *image_index.at(f.image_id)));

  std::stable_sort(out.annotations.begin(), out.annotations.end(),
                   [](const Annotation& a, const Annotation& b) {
                     if (a.image_id != b.image_id) return a.image_id < b.image_id;
                     if (a.soft->soft_score != b.soft->soft_score)
                       return a.soft->soft_score > b.soft->soft_score;
                     return a.category_id < b.category_id;
                   });
  std::int64_t next_id = 1;
  for (auto& a : out.annotations) a.id = next_id++;

  if (options.keep_empty_images) {
    out.images = images;
  } else {
    std::unordered_set<std::int64_t> used;
    for (const auto& a : out.annotations) used.insert(a.image_id);
    for (const auto& img : images)
      if (used.count(img.id)) out.images.push_back(img);
  }
  return out;
}

inline std::vector<Detection> load_sources(const std::vector<DetectionSource>& sources) {
  std::vector<Detection> all;
  for (const auto& src : sources) {
    auto dets = load_detections(src.path, src.model_id);
    all.insert(all.end(), std::make_move_iterator(dets.begin()), std::make_move_iterator(dets.end()));
  }
  return all;
}

inline CocoDataset fuse_dataset(const std::vector<DetectionSource>& sources,
                                const std::vector<ImageRecord>& images,
                                const std::vector<CategoryRecord>& categories,
                                const FusionConfig& config, const PipelineOptions& options = {}) {
  if (sources.empty()) throw ConfigError("at least one detection file is required");
  config.validate();
  const auto dets = load_sources(sources);
  return fuse_detections(dets, images, categories, config, options);
}

/// fuse_dataset with the release threshold.
inline CocoDataset final_annotation_pass(const std::vector<DetectionSource>& sources,
                                         const std::vector<ImageRecord>& images,
                                         const std::vector<CategoryRecord>& categories,
                                         FusionConfig config = {}, const PipelineOptions& options = {}) {
  return fuse_dataset(sources, images, categories, release_config(config), options);
}

/// Per-category distribution plus image coverage and a 10-bin confidence histogram.
struct StatsReport {
  CategoryStats categories;
  std::size_t images_total = 0;
  std::size_t images_with_annotations = 0;
  std::array<std::size_t, 10> score_histogram{};

  Json to_json() const {
    Json per = Json::object();
    for (const auto& [name, n] : categories.counts) per[name] = n;
    return Json{{"categories", per},
                {"total", categories.total},
                {"images", images_total},
                {"images_with_annotations", images_with_annotations},
                {"score_histogram", score_histogram}};
  }

  std::string to_text() const {
    std::ostringstream os;
    std::size_t width = 8;
    for (const auto& [name, n] : categories.counts) width = std::max(width, name.size());
    os << std::left << std::setw(static_cast<int>(width)) << "Category"
       << " | Annotations\n";
    os << std::string(width, '-') << "-+------------\n";
    for (const auto& [name, n] : categories.counts)
      os << std::left << std::setw(static_cast<int>(width)) << name << " | " << n << "\n";
    os << std::string(width, '-') << "-+------------\n";
    os << std::left << std::setw(static_cast<int>(width)) << "Total"
       << " | " << categories.total << "\n";
    os << "images: " << images_with_annotations << " of " << images_total
       << " with at least one annotation\n";
    os << "score histogram:";
    for (std::size_t b = 0; b < score_histogram.size(); ++b)
      os << " [" << std::fixed << std::setprecision(1) << b / 10.0 << "," << (b + 1) / 10.0
         << (b + 1 == score_histogram.size() ? "]" : ")") << "=" << score_histogram[b];
    os << "\n";
    return os.str();
  }
};

inline StatsReport stats_report(const CocoDataset& d) {
  StatsReport r;
  r.categories = category_stats(d);
  r.images_total = d.images.size();
  std::unordered_set<std::int64_t> used;
  for (const auto& a : d.annotations) {
    used.insert(a.image_id);
    const double s = std::clamp(a.confidence(), 0.0, 1.0);
    const auto bin = std::min<std::size_t>(9, static_cast<std::size_t>(s * 10.0));
    ++r.score_histogram[bin];
  }
  r.images_with_annotations = used.size();
  return r;
}

} // namespace softpl

#endif // SOFTPL_PIPELINE_HPP
