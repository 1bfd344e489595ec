#ifndef SOFTPL_SOFT_SCORING_HPP
#define SOFTPL_SOFT_SCORING_HPP

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "softpl/errors.hpp"
#include "softpl/fusion_core.hpp"
#include "softpl/geometry.hpp"

namespace softpl {

enum class ScoreMode { soft, hard };

inline const char* to_string(ScoreMode m) noexcept { return m == ScoreMode::soft ? "soft" : "hard"; }

/// Confidence multiplier: exp(-alpha * spread) * (1 + beta * (num_models - 2)).
/// Exceeds 1 when more than two models agree on a tight cluster.
inline double consensus_factor(double spread, int num_models, double alpha, double beta) {
  const double agreement = 1.0 + beta * static_cast<double>(num_models - 2);
  if (!(agreement > 0.0))
    throw NonPositiveFactorError("consensus bracket 1 + beta*(num_models - 2) = " +
                                 std::to_string(agreement) + " is not positive");
  return std::exp(-alpha * spread) * agreement;
}

/// s_base * cf, clamped at 1.
inline double soft_score(double s_base, double cf) noexcept { return std::min(1.0, s_base * cf); }

/// Hard labels keep the base confidence as-is.
inline double hard_score(double s_base) noexcept { return s_base; }

/// Per-box training weight soft^p.
inline double train_weight(double soft, double p) noexcept { return std::pow(soft, p); }

struct ScoringParams {
  double alpha = 5.0;
  double beta = 0.1;
  double p = 2.0;
  ScoreMode mode = ScoreMode::soft;
};

/// A fused, scored cluster ready for thresholding.
struct FusedBox {
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BBox bbox;
  double s_base = 0.0;
  double spread = 0.0;
  double consensus_factor = 1.0;
  double soft_score = 0.0;
  double train_weight = 0.0;
  std::set<std::string> source_models;
};

/// Fuses a cluster and scores it. In hard mode the spread and consensus factor
/// are still reported but do not affect the score.
inline FusedBox score_cluster(const Cluster& c, const ScoringParams& params) {
  FusedBox f;
  f.image_id = c.image_id;
  f.category_id = c.category_id;
  f.bbox = fuse_cluster(c);
  f.s_base = base_score(c);
  f.spread = cluster_spread(c, f.bbox);
  f.consensus_factor =
      consensus_factor(f.spread, static_cast<int>(c.num_models()), params.alpha, params.beta);
  f.soft_score = params.mode == ScoreMode::soft ? soft_score(f.s_base, f.consensus_factor)
                                                : hard_score(f.s_base);
  f.train_weight = train_weight(f.soft_score, params.p);
  f.source_models = c.model_set;
  return f;
}

} // namespace softpl

#endif // SOFTPL_SOFT_SCORING_HPP
