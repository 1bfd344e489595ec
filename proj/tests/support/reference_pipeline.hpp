#ifndef SOFTPL_TESTS_REFERENCE_PIPELINE_HPP
#define SOFTPL_TESTS_REFERENCE_PIPELINE_HPP

// Naive, deliberately independent reimplementation of the ensemble pseudo-labeling
// pass. Shares no code with the library: its own box math, its own sort, linear
// scans everywhere. Used only as a test oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace ref {

struct Det {
  std::int64_t image = 0;
  std::int64_t category = 0;
  double box[4] = {0, 0, 0, 0};  // x0, y0, x1, y1
  double score = 0.0;
  std::string model;
  std::size_t index = 0;  // position in the original input
};

struct Params {
  double tau = 0.35;
  double theta = 0.65;
  int min_models = 2;
  double tau_final = 0.35;
  double alpha = 5.0;
  double beta = 0.1;
  double p = 2.0;
  bool hard = false;
};

struct Outcome {
  std::int64_t image = 0;
  std::int64_t category = 0;
  std::vector<std::size_t> members;  // input indices, in visiting order
  int num_models = 0;
  double fused[4] = {0, 0, 0, 0};
  double s_base = 0.0;
  double spread = 0.0;
  double cf = 0.0;
  double score = 0.0;
  bool gated_in = false;
  bool accepted = false;
};

inline double box_area(const double* b) { return (b[2] - b[0]) * (b[3] - b[1]); }

inline double overlap(const double* a, const double* b) {
  const double left = a[0] > b[0] ? a[0] : b[0];
  const double top = a[1] > b[1] ? a[1] : b[1];
  const double right = a[2] < b[2] ? a[2] : b[2];
  const double bottom = a[3] < b[3] ? a[3] : b[3];
  if (right <= left || bottom <= top) return 0.0;
  const double inter = (right - left) * (bottom - top);
  const double uni = box_area(a) + box_area(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Clusters per (image, category) and scores every cluster, accepted or not.
inline std::vector<Outcome> run(const std::vector<Det>& input, const Params& prm) {
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<Det>> groups;
  for (const Det& d : input)
    if (d.score >= prm.tau) groups[{d.image, d.category}].push_back(d);

  std::vector<Outcome> out;
  for (auto& [key, dets] : groups) {
    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.model != b.model) return a.model < b.model;
      return a.index < b.index;
    });
    std::vector<std::vector<Det>> clusters;
    for (const Det& d : dets) {
      bool joined = false;
      for (auto& c : clusters) {
        if (overlap(c[0].box, d.box) >= prm.theta) {
          c.push_back(d);
          joined = true;
          break;
        }
      }
      if (!joined) clusters.push_back({d});
    }
    for (const auto& c : clusters) {
      Outcome o;
      o.image = key.first;
      o.category = key.second;
      std::set<std::string> models;
      double total = 0.0;
      for (const Det& d : c) {
        o.members.push_back(d.index);
        models.insert(d.model);
        total += d.score;
        o.s_base = std::max(o.s_base, d.score);
      }
      o.num_models = static_cast<int>(models.size());
      for (int k = 0; k < 4; ++k) {
        double v = 0.0;
        for (const Det& d : c) v += d.score / total * d.box[k];
        o.fused[k] = v;
      }
      double mean = 0.0;
      for (const Det& d : c) mean += overlap(d.box, o.fused);
      mean /= static_cast<double>(c.size());
      o.spread = 1.0 - mean;
      o.cf = std::exp(-prm.alpha * o.spread) * (1.0 + prm.beta * (o.num_models - 2));
      o.score = prm.hard ? o.s_base : std::min(1.0, o.s_base * o.cf);
      o.gated_in = o.num_models >= prm.min_models;
      o.accepted = o.gated_in && o.score >= prm.tau_final;
      out.push_back(o);
    }
  }
  return out;
}

} // namespace ref

#endif // SOFTPL_TESTS_REFERENCE_PIPELINE_HPP
