// Acceptance gate: one PASS/FAIL line per criterion; exit status is non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "softpl/softpl.hpp"
#include "support/cli_runner.hpp"
#include "support/oracle_compare.hpp"
#include "support/pipeline_checks.hpp"
#include "support/reference_eval.hpp"
#include "support/reference_mmd.hpp"
#include "support/test_util.hpp"

namespace {

struct Outcome {
  enum Kind { pass, fail, skip } kind = pass;
  std::string detail;
};

Outcome ok(std::string d = {}) { return {Outcome::pass, std::move(d)}; }
Outcome bad(std::string d) { return {Outcome::fail, std::move(d)}; }

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

#define REQUIRE(cond, msg)                 \
  do {                                     \
    if (!(cond)) return bad(msg);          \
  } while (0)

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

// 1. Worked example: B1=(0,0,10,10) s=0.6, B2=(0,0,20,10) s=0.4.
//    B* = 0.6*B1 + 0.4*B2 = (0,0,14,10).
//    IoU(B1,B*) = 100/140, IoU(B2,B*) = 140/200, spread = 1 - (5/7 + 7/10)/2 = 0.292857...
//    cf = exp(-5 * 0.292857) * (1 + 0.1 * 0) = 0.231243, s* = 0.6 * cf = 0.138746.
Outcome ac1() {
  softpl::Cluster c;
  c.image_id = 1;
  c.category_id = 1;
  c.members = {{1, 1, {0, 0, 10, 10}, 0.6, "m1"}, {1, 1, {0, 0, 20, 10}, 0.4, "m2"}};
  c.model_set = {"m1", "m2"};
  const auto soft = softpl::score_cluster(c, {});
  REQUIRE(near(soft.bbox.x_min, 0, 1e-12) && near(soft.bbox.y_min, 0, 1e-12) && near(soft.bbox.x_max, 14, 1e-12) &&
              near(soft.bbox.y_max, 10, 1e-12),
          "fused box is not (0,0,14,10)");
  REQUIRE(near(soft.spread, 0.292857, 1e-5), "spread " + fmt(soft.spread));
  REQUIRE(near(soft.consensus_factor, 0.23127, 1e-4), "cf " + fmt(soft.consensus_factor));
  REQUIRE(near(soft.soft_score, 0.13876, 1e-4), "soft score " + fmt(soft.soft_score));
  softpl::FusionConfig cfg;
  cfg.theta = 0.5;
  const std::vector<softpl::ImageRecord> imgs = {{1, 100, 100, "a"}};
  const std::vector<softpl::CategoryRecord> cats = {{1, "c"}};
  REQUIRE(softpl::fuse_detections(c.members, imgs, cats, cfg).annotations.empty(), "soft box accepted at 0.35");
  cfg.mode = softpl::ScoreMode::hard;
  const auto hard = softpl::fuse_detections(c.members, imgs, cats, cfg);
  REQUIRE(hard.annotations.size() == 1 && hard.annotations[0].soft->soft_score == 0.6, "hard box not accepted at 0.6");
  return ok("spread=" + fmt(soft.spread) + " cf=" + fmt(soft.consensus_factor) + " s*=" + fmt(soft.soft_score));
}

// 2. Oracle equivalence on 500 random small instances.
Outcome ac2() {
  std::mt19937_64 rng(20240917);
  std::size_t clusters = 0, accepted = 0;
  for (int i = 0; i < 500; ++i) {
    const auto in = oracle::random_instance(rng, i % 5 == 4);
    if (auto e = oracle::compare(in); !e.empty()) return bad("instance " + std::to_string(i) + ": " + e);
    for (const auto& o : ref::run(in.ref, oracle::to_ref(in.config))) {
      ++clusters;
      accepted += o.accepted;
    }
  }
  return ok("500 instances, " + std::to_string(clusters) + " clusters, " + std::to_string(accepted) + " accepted");
}

// 3. Monotonicity over 100 seeded simulator runs.
Outcome ac3() {
  for (std::uint64_t seed = 1; seed <= 100; ++seed)
    if (auto e = checks::monotonicity_run(seed); !e.empty()) return bad("seed " + std::to_string(seed) + ": " + e);
  return ok("100 runs");
}

// 4. Evaluator fixtures and brute-force agreement.
Outcome ac4() {
  softpl::CocoDataset gt;
  gt.images = {{1, 100, 100, "a"}, {2, 100, 100, "b"}};
  gt.categories = {{1, "c1"}, {2, "c2"}};
  softpl::Annotation a;
  a.id = 1;
  a.image_id = 1;
  a.category_id = 1;
  a.bbox = {0, 0, 10, 10};
  gt.annotations = {a};
  const std::vector<softpl::Detection> d = {{1, 1, {0, 0, 6, 10}, 0.9, "m"}};
  const auto r = softpl::evaluate(gt, d);
  REQUIRE(near(r.map, 0.3, 1e-6), "IoU-0.6 mAP " + fmt(r.map));
  REQUIRE(r.map50 == 1.0 && r.map75 == 0.0, "IoU-0.6 mAP50/75 " + fmt(r.map50) + "/" + fmt(r.map75));

  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> n(0, 10), img(1, 2), cat(1, 2);
  std::uniform_real_distribution<double> pos(0, 40), size(5, 25), u(0, 1), jit(-3, 3);
  for (int trial = 0; trial < 500; ++trial) {
    softpl::CocoDataset g = gt;
    g.annotations.clear();
    std::vector<softpl::Detection> dets;
    std::vector<ref::EvalBox> rg, rd;
    const int ng = n(rng);
    for (int i = 0; i < ng; ++i) {
      const double x = pos(rng), y = pos(rng);
      softpl::Annotation b;
      b.id = i + 1;
      b.image_id = img(rng);
      b.category_id = cat(rng);
      b.bbox = {x, y, x + size(rng), y + size(rng)};
      g.annotations.push_back(b);
      rg.push_back({b.image_id, b.category_id, {b.bbox.x_min, b.bbox.y_min, b.bbox.x_max, b.bbox.y_max}, 1});
    }
    const int nd = n(rng);
    for (int i = 0; i < nd; ++i) {
      softpl::Detection x;
      if (ng > 0 && u(rng) < 0.7) {
        const auto& t = g.annotations[static_cast<std::size_t>(std::uniform_int_distribution<int>(0, ng - 1)(rng))];
        x.image_id = t.image_id;
        x.category_id = t.category_id;
        const double x0 = t.bbox.x_min + jit(rng), y0 = t.bbox.y_min + jit(rng);
        x.bbox = {x0, y0, std::max(x0 + 1, t.bbox.x_max + jit(rng)), std::max(y0 + 1, t.bbox.y_max + jit(rng))};
      } else {
        const double x0 = pos(rng), y0 = pos(rng);
        x.image_id = img(rng);
        x.category_id = cat(rng);
        x.bbox = {x0, y0, x0 + size(rng), y0 + size(rng)};
      }
      x.score = u(rng);
      dets.push_back(x);
      rd.push_back({x.image_id, x.category_id, {x.bbox.x_min, x.bbox.y_min, x.bbox.x_max, x.bbox.y_max}, x.score});
    }
    const auto got = softpl::evaluate(g, dets);
    const auto want = ref::brute_force_map({1, 2}, {1, 2}, rg, rd);
    REQUIRE(near(got.map, want.map, 1e-6), "random instance " + std::to_string(trial) + ": " + fmt(got.map) +
                                              " vs brute force " + fmt(want.map));
  }

  gt.annotations.push_back(a);
  gt.annotations.back().id = 2;
  gt.annotations.back().image_id = 2;
  gt.annotations.back().category_id = 2;
  gt.annotations.back().bbox = {10, 10, 90, 90};
  const auto perfect = softpl::evaluate(gt, softpl::annotations_as_detections(gt));
  REQUIRE(perfect.map == 1.0 && perfect.map50 == 1.0 && perfect.map75 == 1.0, "perfect predictions below 1.0");
  REQUIRE(perfect.map_small == 1.0 && perfect.map_medium == 1.0, "perfect predictions below 1.0 in size buckets");
  return ok("fixture mAP=" + fmt(r.map) + ", 500 random instances");
}

// Minimum ensemble-over-best-single precision gain on the shipped noisy preset.
constexpr double kRequiredGain = 0.02;

// 5. Simulator noise-free limit and noisy preset ensemble gain.
Outcome ac5() {
  softpl::SimConfig clean;
  clean.num_models = 3;
  clean.jitter_sigma = 0.0;
  clean.detect_prob = 1.0;
  clean.false_positive_rate = 0.0;
  const auto sim = softpl::generate(clean);
  const auto out = softpl::fuse_detections(checks::flatten(sim), sim.ground_truth.images,
                                           sim.ground_truth.categories, {});
  const auto q = softpl::score_pseudo_labels(sim.ground_truth, out, 0.5);
  REQUIRE(q.precision == 1.0 && q.recall == 1.0,
          "noise-free precision/recall " + fmt(q.precision) + "/" + fmt(q.recall));

  const auto noisy = softpl::generate(softpl::noisy_preset());
  double best_single = 0.0;
  std::string best_model;
  for (const auto& [model, dets] : noisy.per_model_detections) {
    std::vector<softpl::Detection> kept;
    for (const auto& x : dets)
      if (x.score >= 0.35) kept.push_back(x);
    const auto s = softpl::score_predictions(noisy.ground_truth, kept, 0.5);
    if (s.precision > best_single) {
      best_single = s.precision;
      best_model = model;
    }
  }
  const auto pl = softpl::fuse_detections(checks::flatten(noisy), noisy.ground_truth.images,
                                          noisy.ground_truth.categories, {});
  const auto e = softpl::score_pseudo_labels(noisy.ground_truth, pl, 0.5);
  const std::string detail = "ensemble precision " + fmt(e.precision, 4) + " (recall " + fmt(e.recall, 4) +
                             "), best single " + best_model + " " + fmt(best_single, 4);
  REQUIRE(e.precision >= best_single + kRequiredGain, detail);
  return ok(detail);
}

// Two-Gaussian setup for the MMD run-to-run spread check.
constexpr std::size_t kMmdDim = 16;
constexpr std::size_t kMmdSamples = 400;
constexpr double kMmdShift = 1.3;
constexpr double kReferenceStd = 0.0054;

// 6. MMD properties and run-to-run spread.
Outcome ac6() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 1.0);
  auto points = [&](std::size_t n, std::size_t dim, double shift) {
    ref::Points p(n, std::vector<double>(dim));
    for (auto& row : p)
      for (auto& v : row) v = g(rng) + shift;
    return p;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t dim = 1 + static_cast<std::size_t>(trial % 4);
    const auto px = points(1 + static_cast<std::size_t>(trial % 20), dim, 0.0);
    const auto py = points(20 - static_cast<std::size_t>(trial % 20), dim, 0.8);
    const auto x = softpl::FeatureMatrix::from_rows(px), y = softpl::FeatureMatrix::from_rows(py);
    REQUIRE(softpl::mmd_rbf(x, x) <= 1e-9, "MMD(X,X) != 0");
    REQUIRE(softpl::mmd_rbf(x, y) == softpl::mmd_rbf(y, x), "MMD not symmetric");
    softpl::MmdOptions o;
    o.bandwidth = 0.5 + trial % 3;
    REQUIRE(near(softpl::mmd_rbf(x, y, o), ref::mmd(px, py, *o.bandwidth), 1e-9), "double-loop oracle mismatch");
  }
  // Five runs, each on freshly drawn samples of the same size.
  softpl::MmdSummary s;
  for (int run = 0; run < 5; ++run) {
    const auto x = softpl::FeatureMatrix::from_rows(points(kMmdSamples, kMmdDim, 0.0));
    const auto y = softpl::FeatureMatrix::from_rows(points(kMmdSamples, kMmdDim, kMmdShift));
    s.runs.push_back(softpl::mmd_rbf(x, y));
  }
  for (double v : s.runs) s.mean += v / 5.0;
  for (double v : s.runs) s.stddev += (v - s.mean) * (v - s.mean) / 5.0;
  s.stddev = std::sqrt(s.stddev);
  const std::string detail = "two-Gaussian mean " + fmt(s.mean, 4) + " +- " + fmt(s.stddev, 2) +
                             " (reference 0.0054, accepted [" + fmt(kReferenceStd / 5, 3) + ", " +
                             fmt(kReferenceStd * 5, 3) + "])";
  REQUIRE(s.stddev >= kReferenceStd / 5 && s.stddev <= kReferenceStd * 5, detail);
  return ok(detail);
}

// 7. Defaults audit through the library and the CLI.
Outcome ac7() {
  auto check = [](const softpl::Json& j) -> std::string {
    const auto& f = j.at("fuse");
    if (f.at("theta") != 0.65) return "theta";
    if (f.at("min_models") != 2) return "min_models";
    if (f.at("alpha") != 5.0) return "alpha";
    if (f.at("beta") != 0.1) return "beta";
    if (f.at("p") != 2.0) return "p";
    if (f.at("tau") != 0.35) return "tau";
    if (f.at("tau_final") != 0.35) return "tau_final";
    if (j.at("release_preset").at("tau_final") != 0.4) return "release tau_final";
    return {};
  };
  if (auto e = check(softpl::Json::parse(softpl::print_defaults())); !e.empty()) return bad("library default " + e);
  testutil::TempDir dir;
  const auto r = cli::run("print-defaults", dir.path());
  REQUIRE(r.code == 0, "print-defaults exited " + std::to_string(r.code));
  if (auto e = check(softpl::Json::parse(r.out)); !e.empty()) return bad("CLI default " + e);
  return ok("theta=0.65 m=2 alpha=5 beta=0.1 p=2 tau=tau_f=0.35 release tau_f=0.4");
}

// 8. Byte-identical fuse and simulate outputs at 1, 4 and 8 threads.
Outcome ac8() {
  testutil::TempDir dir;
  std::string sim_ref, fuse_ref;
  for (int t : {1, 4, 8}) {
    const std::string tag = std::to_string(t);
    const auto sd = dir / ("sim" + tag);
    auto r = cli::run("--verbosity quiet --threads " + tag + " simulate --preset noisy --images 60 --out-dir " +
                          cli::quote(sd.string()),
                      dir.path());
    REQUIRE(r.code == 0, "simulate exited " + std::to_string(r.code));
    std::string sim_bytes = testutil::read_text(sd / "gt.json");
    std::string fuse_args = "--verbosity quiet --threads " + tag + " fuse --images " + cli::quote((sd / "gt.json").string());
    for (int k = 1; k <= 4; ++k) {
      const auto det = sd / ("det_model_" + std::to_string(k) + ".json");
      sim_bytes += testutil::read_text(det);
      fuse_args += " --det " + cli::quote(det.string()) + ":model_" + std::to_string(k);
    }
    const auto out = dir / ("pl" + tag + ".json");
    r = cli::run(fuse_args + " --out " + cli::quote(out.string()), dir.path());
    REQUIRE(r.code == 0, "fuse exited " + std::to_string(r.code));
    const std::string fuse_bytes = testutil::read_text(out);
    if (t == 1) {
      sim_ref = sim_bytes;
      fuse_ref = fuse_bytes;
      REQUIRE(!fuse_ref.empty() && !sim_ref.empty(), "empty outputs");
    } else {
      REQUIRE(sim_bytes == sim_ref, "simulate output differs at " + tag + " threads");
      REQUIRE(fuse_bytes == fuse_ref, "fuse output differs at " + tag + " threads");
    }
  }
  return ok("simulate " + std::to_string(sim_ref.size()) + " B, fuse " + std::to_string(fuse_ref.size()) + " B");
}

// 9. Published pseudo-label file, if supplied through SOFTPL_PFINAL.
Outcome ac9() {
  const char* path = std::getenv("SOFTPL_PFINAL");
  if (!path || !*path) return {Outcome::skip, "SOFTPL_PFINAL not set"};
  if (!std::filesystem::exists(path)) return {Outcome::skip, std::string(path) + " not found"};
  const auto stats = softpl::stats_report(softpl::load_dataset(path));
  std::map<std::string, std::size_t> norm;
  for (const auto& [name, n] : stats.categories.counts) {
    std::string k = name;
    std::transform(k.begin(), k.end(), k.begin(), [](unsigned char c) { return c == '_' || c == '-' ? ' ' : std::tolower(c); });
    norm[k] += n;
  }
  const std::map<std::string, std::size_t> want = {
      {"cardboard", 21352}, {"soft plastic", 9806}, {"rigid plastic", 1523}, {"metal", 394}};
  for (const auto& [k, n] : want) {
    const auto it = norm.find(k);
    const std::size_t got = it == norm.end() ? 0 : it->second;
    REQUIRE(got == n, k + ": " + std::to_string(got) + " != " + std::to_string(n));
  }
  REQUIRE(stats.categories.total == 33075, "total " + std::to_string(stats.categories.total));
  return ok("total 33075");
}

} // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"AC1 worked example", ac1},       {"AC2 oracle equivalence", ac2}, {"AC3 monotonicity", ac3},
      {"AC4 evaluator", ac4},            {"AC5 simulator", ac5},          {"AC6 mmd", ac6},
      {"AC7 defaults", ac7},             {"AC8 determinism", ac8},        {"AC9 published stats", ac9},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = bad(std::string("exception: ") + e.what());
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.kind == Outcome::pass ? "PASS" : o.kind == Outcome::fail ? "FAIL" : "SKIP";
    failures += o.kind == Outcome::fail;
    std::printf("%s %s (%.1f ms)%s%s\n", tag, name, ms, o.detail.empty() ? "" : ": ", o.detail.c_str());
  }
  std::fflush(stdout);
  return failures == 0 ? 0 : 1;
}
