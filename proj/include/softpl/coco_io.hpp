#ifndef SOFTPL_COCO_IO_HPP
#define SOFTPL_COCO_IO_HPP

// Strict COCO JSON reader/writer.
//
// Detection results are a top-level array of {image_id, category_id, bbox, score}.
// Datasets are objects with "images", "categories" and "annotations". Pseudo-label
// annotations extend the COCO record with soft_score, spread, consensus_factor,
// train_weight, source_models, num_models and bbox_xyxy (the exact corner-form box,
// preferred over "bbox" on load so that write/load is bit-exact).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "softpl/atomic_file.hpp"
#include "softpl/errors.hpp"
#include "softpl/geometry.hpp"

namespace softpl {

using Json = nlohmann::json;

struct ImageRecord {
  std::int64_t id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct CategoryRecord {
  std::int64_t id = 0;
  std::string name;

  friend bool operator==(const CategoryRecord&, const CategoryRecord&) = default;
};

/// One model's scored box on one image.
struct Detection {
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BBox bbox;
  double score = 0.0;
  std::string model_id;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Ensemble bookkeeping carried by pseudo-label annotations.
struct SoftFields {
  double soft_score = 0.0;
  double spread = 0.0;
  double consensus_factor = 1.0;
  double train_weight = 0.0;
  std::vector<std::string> source_models;
  int num_models = 0;

  friend bool operator==(const SoftFields&, const SoftFields&) = default;
};

/// A dataset annotation. Ground truth has neither `score` nor `soft`; pseudo-labels
/// carry both (`score` is the cluster's base confidence, `soft->soft_score` the
/// thresholded confidence).
struct Annotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BBox bbox;
  std::optional<double> area;
  std::optional<double> score;
  std::optional<SoftFields> soft;

  double effective_area() const noexcept { return area ? *area : softpl::area(bbox); }
  /// Ranking confidence: soft score, else score, else 1 (ground truth).
  double confidence() const noexcept {
    if (soft) return soft->soft_score;
    if (score) return *score;
    return 1.0;
  }

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

using PseudoAnnotation = Annotation;

struct CocoDataset {
  std::vector<ImageRecord> images;
  std::vector<CategoryRecord> categories;
  std::vector<Annotation> annotations;

  friend bool operator==(const CocoDataset&, const CocoDataset&) = default;
};

namespace detail {

inline std::string record_tag(const char* what, std::size_t index) {
  return std::string(what) + " record " + std::to_string(index);
}

inline const Json& require(const Json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(where + ": missing field \"" + key + "\"");
  return *it;
}

inline std::int64_t require_int(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_number_integer())
    throw ParseError(where + ": field \"" + key + "\" must be an integer");
  if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX))
    throw RangeError(where + ": field \"" + key + "\" overflows int64");
  return v.get<std::int64_t>();
}

inline double as_number(const Json& v, const std::string& where, const char* key) {
  if (!v.is_number()) throw ParseError(where + ": field \"" + key + "\" must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw RangeError(where + ": field \"" + key + "\" is not finite");
  return d;
}

inline double require_number(const Json& obj, const char* key, const std::string& where) {
  return as_number(require(obj, key, where), where, key);
}

inline std::string require_string(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_string()) throw ParseError(where + ": field \"" + key + "\" must be a string");
  return v.get<std::string>();
}

inline BBox parse_xywh(const Json& obj, const std::string& where) {
  const Json& v = require(obj, "bbox", where);
  if (!v.is_array() || v.size() != 4)
    throw ParseError(where + ": \"bbox\" must be an array of 4 numbers");
  double c[4];
  for (std::size_t k = 0; k < 4; ++k) c[k] = as_number(v[k], where, "bbox");
  if (c[2] < 0.0 || c[3] < 0.0) throw RangeError(where + ": negative bbox width/height");
  return from_xywh(c[0], c[1], c[2], c[3]);
}

inline BBox parse_bbox(const Json& obj, const std::string& where) {
  BBox b = parse_xywh(obj, where);
  auto it = obj.find("bbox_xyxy");
  if (it == obj.end()) return b;
  if (!it->is_array() || it->size() != 4)
    throw ParseError(where + ": \"bbox_xyxy\" must be an array of 4 numbers");
  BBox exact{as_number((*it)[0], where, "bbox_xyxy"), as_number((*it)[1], where, "bbox_xyxy"),
             as_number((*it)[2], where, "bbox_xyxy"), as_number((*it)[3], where, "bbox_xyxy")};
  if (!exact.valid()) throw RangeError(where + ": \"bbox_xyxy\" is not a valid box");
  const double scale = 1.0 + std::max({std::abs(exact.x_max), std::abs(exact.y_max),
                                       std::abs(exact.x_min), std::abs(exact.y_min)});
  const double tol = 1e-6 * scale;
  if (std::abs(exact.x_min - b.x_min) > tol || std::abs(exact.y_min - b.y_min) > tol ||
      std::abs(exact.x_max - b.x_max) > tol || std::abs(exact.y_max - b.y_max) > tol)
    throw ParseError(where + ": \"bbox\" and \"bbox_xyxy\" disagree");
  return exact;
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(origin + ": malformed JSON: " + e.what());
  }
}

inline const Json& require_array(const Json& root, const char* key, const std::string& origin) {
  if (!root.is_object()) throw ParseError(origin + ": expected a COCO dataset object");
  auto it = root.find(key);
  if (it == root.end()) throw ParseError(origin + ": missing \"" + key + "\" array");
  if (!it->is_array()) throw ParseError(origin + ": \"" + key + "\" must be an array");
  return *it;
}

} // namespace detail

inline Json read_json(const std::filesystem::path& path) {
  return detail::parse_json_text(read_file(path), path.string());
}

/// Parses a COCO results array, tagging every record with `model_id`.
inline std::vector<Detection> parse_detections(const Json& root, const std::string& model_id) {
  if (!root.is_array()) throw ParseError("detection results must be a top-level array");
  if (model_id.empty()) throw ParseError("model_id must be non-empty");
  std::vector<Detection> out;
  out.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    const std::string where = detail::record_tag("detection", i);
    const Json& r = root[i];
    if (!r.is_object()) throw ParseError(where + ": not an object");
    Detection d;
    d.image_id = detail::require_int(r, "image_id", where);
    d.category_id = detail::require_int(r, "category_id", where);
    d.bbox = detail::parse_xywh(r, where);
    d.score = detail::require_number(r, "score", where);
    if (d.score < 0.0 || d.score > 1.0)
      throw RangeError(where + ": score " + std::to_string(d.score) + " outside [0,1]");
    d.model_id = model_id;
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<Detection> load_detections(const std::filesystem::path& path,
                                              const std::string& model_id) {
  try {
    return parse_detections(read_json(path), model_id);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const RangeError& e) {
    throw RangeError(path.string() + ": " + e.what());
  }
}

inline std::vector<ImageRecord> parse_images(const Json& root) {
  const Json& arr = detail::require_array(root, "images", "dataset");
  std::vector<ImageRecord> out;
  out.reserve(arr.size());
  std::unordered_set<std::int64_t> seen;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = detail::record_tag("image", i);
    const Json& r = arr[i];
    if (!r.is_object()) throw ParseError(where + ": not an object");
    ImageRecord img;
    img.id = detail::require_int(r, "id", where);
    const auto w = detail::require_int(r, "width", where);
    const auto h = detail::require_int(r, "height", where);
    if (w <= 0 || h <= 0 || w > INT32_MAX || h > INT32_MAX)
      throw RangeError(where + ": width and height must be positive");
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    if (auto it = r.find("file_name"); it != r.end()) {
      if (!it->is_string()) throw ParseError(where + ": \"file_name\" must be a string");
      img.file_name = it->get<std::string>();
    }
    if (!seen.insert(img.id).second) throw DuplicateIdError(img.id);
    out.push_back(std::move(img));
  }
  return out;
}

inline std::vector<CategoryRecord> parse_categories(const Json& root) {
  const Json& arr = detail::require_array(root, "categories", "dataset");
  std::vector<CategoryRecord> out;
  out.reserve(arr.size());
  std::unordered_set<std::int64_t> seen;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = detail::record_tag("category", i);
    const Json& r = arr[i];
    if (!r.is_object()) throw ParseError(where + ": not an object");
    CategoryRecord c;
    c.id = detail::require_int(r, "id", where);
    c.name = detail::require_string(r, "name", where);
    if (c.name.empty()) throw RangeError(where + ": empty category name");
    if (!seen.insert(c.id).second) throw DuplicateIdError(c.id);
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<Annotation> parse_annotations(const Json& root) {
  const Json& arr = detail::require_array(root, "annotations", "dataset");
  std::vector<Annotation> out;
  out.reserve(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = detail::record_tag("annotation", i);
    const Json& r = arr[i];
    if (!r.is_object()) throw ParseError(where + ": not an object");
    Annotation a;
    a.id = detail::require_int(r, "id", where);
    a.image_id = detail::require_int(r, "image_id", where);
    a.category_id = detail::require_int(r, "category_id", where);
    a.bbox = detail::parse_bbox(r, where);
    if (r.contains("area")) a.area = detail::require_number(r, "area", where);
    if (r.contains("score")) a.score = detail::require_number(r, "score", where);
    if (r.contains("soft_score")) {
      SoftFields s;
      s.soft_score = detail::require_number(r, "soft_score", where);
      s.spread = detail::require_number(r, "spread", where);
      s.consensus_factor = detail::require_number(r, "consensus_factor", where);
      s.train_weight = detail::require_number(r, "train_weight", where);
      const Json& models = detail::require(r, "source_models", where);
      if (!models.is_array()) throw ParseError(where + ": \"source_models\" must be an array");
      for (const Json& m : models) {
        if (!m.is_string()) throw ParseError(where + ": \"source_models\" entries must be strings");
        s.source_models.push_back(m.get<std::string>());
      }
      const auto n = detail::require_int(r, "num_models", where);
      std::set<std::string> distinct(s.source_models.begin(), s.source_models.end());
      if (n != static_cast<std::int64_t>(distinct.size()))
        throw RangeError(where + ": num_models does not match source_models");
      s.num_models = static_cast<int>(n);
      a.soft = std::move(s);
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Checks id uniqueness and that every annotation resolves.
inline void validate(const CocoDataset& d) {
  std::unordered_set<std::int64_t> images, categories, anns;
  for (const auto& img : d.images)
    if (!images.insert(img.id).second) throw DuplicateIdError(img.id);
  for (const auto& c : d.categories)
    if (!categories.insert(c.id).second) throw DuplicateIdError(c.id);
  for (const auto& a : d.annotations) {
    if (!anns.insert(a.id).second) throw DuplicateIdError(a.id);
    if (!images.count(a.image_id))
      throw UnknownImageError("annotation " + std::to_string(a.id) + " references unknown image " +
                              std::to_string(a.image_id));
    if (!categories.count(a.category_id))
      throw UnknownCategoryError("annotation " + std::to_string(a.id) +
                                 " references unknown category " + std::to_string(a.category_id));
    if (!a.bbox.valid())
      throw RangeError("annotation " + std::to_string(a.id) + " has an invalid box");
  }
}

inline CocoDataset parse_dataset(const Json& root) {
  CocoDataset d;
  d.images = parse_images(root);
  d.categories = parse_categories(root);
  if (root.contains("annotations")) d.annotations = parse_annotations(root);
  validate(d);
  return d;
}

inline std::vector<ImageRecord> load_images(const std::filesystem::path& path) {
  return parse_images(read_json(path));
}

inline std::vector<CategoryRecord> load_categories(const std::filesystem::path& path) {
  return parse_categories(read_json(path));
}

inline CocoDataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_json(path));
}

inline Json to_json(const Annotation& a) {
  const auto xywh = to_xywh(a.bbox);
  Json j = {{"id", a.id},
            {"image_id", a.image_id},
            {"category_id", a.category_id},
            {"bbox", {xywh[0], xywh[1], xywh[2], xywh[3]}},
            {"bbox_xyxy", {a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max}},
            {"iscrowd", 0}};
  if (a.area) j["area"] = *a.area;
  if (a.score) j["score"] = *a.score;
  if (a.soft) {
    j["soft_score"] = a.soft->soft_score;
    j["spread"] = a.soft->spread;
    j["consensus_factor"] = a.soft->consensus_factor;
    j["train_weight"] = a.soft->train_weight;
    j["source_models"] = a.soft->source_models;
    j["num_models"] = a.soft->num_models;
  }
  return j;
}

inline Json to_json(const CocoDataset& d) {
  Json images = Json::array();
  for (const auto& img : d.images)
    images.push_back({{"id", img.id},
                      {"width", img.width},
                      {"height", img.height},
                      {"file_name", img.file_name}});
  Json categories = Json::array();
  for (const auto& c : d.categories) categories.push_back({{"id", c.id}, {"name", c.name}});
  Json annotations = Json::array();
  for (const auto& a : d.annotations) annotations.push_back(to_json(a));
  return Json{{"images", std::move(images)},
              {"categories", std::move(categories)},
              {"annotations", std::move(annotations)}};
}

/// Orders annotations by (image_id asc, confidence desc); stable otherwise.
inline void sort_annotations(std::vector<Annotation>& anns) {
  std::stable_sort(anns.begin(), anns.end(), [](const Annotation& a, const Annotation& b) {
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.confidence() > b.confidence();
  });
}

inline std::string dump_dataset(CocoDataset d) {
  validate(d);
  sort_annotations(d.annotations);
  return to_json(d).dump(1, ' ') + "\n";
}

/// Serializes in the extended COCO schema and replaces `path` atomically.
inline void write_pseudo_labels(const CocoDataset& d, const std::filesystem::path& path) {
  write_file_atomic(path, dump_dataset(d));
}

inline Json detections_to_json(const std::vector<Detection>& dets) {
  Json arr = Json::array();
  for (const auto& d : dets) {
    const auto xywh = to_xywh(d.bbox);
    arr.push_back({{"image_id", d.image_id},
                   {"category_id", d.category_id},
                   {"bbox", {xywh[0], xywh[1], xywh[2], xywh[3]}},
                   {"score", d.score}});
  }
  return arr;
}

inline void write_detections(const std::vector<Detection>& dets, const std::filesystem::path& path) {
  write_file_atomic(path, detections_to_json(dets).dump(1, ' ') + "\n");
}

/// Annotation count per category name, in name order, plus the total.
struct CategoryStats {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
};

inline CategoryStats category_stats(const CocoDataset& d) {
  CategoryStats s;
  std::unordered_map<std::int64_t, std::string> names;
  for (const auto& c : d.categories) {
    names.emplace(c.id, c.name);
    s.counts.emplace(c.name, 0);
  }
  for (const auto& a : d.annotations) {
    auto it = names.find(a.category_id);
    const std::string name = it != names.end() ? it->second : std::to_string(a.category_id);
    ++s.counts[name];
    ++s.total;
  }
  return s;
}

} // namespace softpl

#endif // SOFTPL_COCO_IO_HPP
