// softpl: ensemble soft pseudo-labeling toolkit.
//
// Exit codes: 0 success, 1 internal error, 2 configuration/usage error,
// 3 unreadable or malformed input.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "json_config.hpp"
#include "softpl/softpl.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitInput = 3;

struct GlobalOptions {
  std::string verbosity = "info";
  std::string threads = "auto";
  std::string config_file;

  unsigned thread_count() const {
    if (threads == "auto") return softpl::resolve_threads(0);
    try {
      std::size_t pos = 0;
      const long v = std::stol(threads, &pos);
      if (pos == threads.size() && v >= 1) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw softpl::ConfigError("--threads must be a positive integer or \"auto\"");
  }
};

struct FuseArgs {
  std::vector<std::string> dets;
  std::string images;
  std::string categories;
  std::string out;
  softpl::FusionConfig config;
  std::string mode = "soft";
  bool release = false;
  bool keep_empty_images = true;
  bool seedless = false;
};

struct EvalArgs {
  std::string gt;
  std::string det;
  bool per_class = false;
  bool confusion = false;
  double iou = 0.5;
  double score = 0.3;
  std::string out;
};

struct SimulateArgs {
  softpl::SimConfig config;
  std::string preset;
  std::string out_dir;
};

struct ScorePlArgs {
  std::string gt;
  std::string pseudo;
  double iou = 0.5;
  std::string out;
};

struct StatsArgs {
  std::string in;
  bool json = false;
  std::string out;
};

struct MmdArgs {
  std::string a;
  std::string b;
  std::string bandwidth = "median";
  std::string kernel = "rbf";
  int repeats = 5;
  double subsample = 0.8;
  std::uint64_t seed = 0;
  std::string out;
};

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  softpl::write_file_atomic(path, text);
  spdlog::info("wrote {}", path);
}

std::vector<softpl::DetectionSource> parse_sources(const std::vector<std::string>& specs) {
  std::vector<softpl::DetectionSource> out;
  for (const auto& s : specs) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
      throw softpl::ConfigError("--det expects <path>:<model_id>, got \"" + s + "\"");
    out.push_back({s.substr(0, colon), s.substr(colon + 1)});
  }
  return out;
}

int run_fuse(const FuseArgs& a, const GlobalOptions& g, const CLI::App& cmd) {
  softpl::FusionConfig config = a.config;
  config.mode = softpl::parse_score_mode(a.mode);
  if (a.release && cmd.count("--tau-final") == 0) config = softpl::release_config(config);
  config.validate();
  spdlog::info("effective fusion config: {}", softpl::to_json(config).dump());

  const auto sources = parse_sources(a.dets);
  const auto images = softpl::load_images(a.images);
  const auto categories = softpl::load_categories(a.categories.empty() ? a.images : a.categories);
  softpl::PipelineOptions opts;
  opts.threads = g.thread_count();
  opts.keep_empty_images = a.keep_empty_images;
  const auto result = softpl::fuse_dataset(sources, images, categories, config, opts);
  softpl::write_pseudo_labels(result, a.out);
  spdlog::info("wrote {} pseudo-labels over {} images to {}", result.annotations.size(),
               result.images.size(), a.out);
  return kExitOk;
}

std::vector<softpl::Detection> load_any_detections(const std::string& path) {
  const auto root = softpl::read_json(path);
  if (root.is_object()) return softpl::annotations_as_detections(softpl::parse_dataset(root));
  return softpl::parse_detections(root, "eval");
}

std::string percent(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * v;
  return os.str();
}

int run_eval(const EvalArgs& a, const GlobalOptions& g) {
  const auto gt = softpl::load_dataset(a.gt);
  const auto dets = load_any_detections(a.det);
  softpl::EvalOptions opts;
  opts.threads = g.thread_count();
  const auto r = softpl::evaluate(gt, dets, opts);

  std::cout << "  mAP  mAP50  mAP75  mAPs  mAPm  mAPl\n";
  std::cout << std::setw(5) << percent(r.map) << std::setw(7) << percent(r.map50) << std::setw(7)
            << percent(r.map75) << std::setw(6) << percent(r.map_small) << std::setw(6)
            << percent(r.map_medium) << std::setw(6) << percent(r.map_large) << "\n";

  softpl::Json j{{"map", r.map},           {"map50", r.map50},         {"map75", r.map75},
                 {"map_small", r.map_small}, {"map_medium", r.map_medium}, {"map_large", r.map_large}};
  if (a.per_class) {
    softpl::Json per = softpl::Json::object();
    std::cout << "\nper-class AP:\n";
    for (const auto& c : gt.categories) {
      auto it = r.per_class_ap.find(c.id);
      if (it == r.per_class_ap.end()) continue;
      per[c.name] = it->second;
      std::cout << "  " << std::left << std::setw(16) << c.name << std::right << percent(it->second)
                << "\n";
    }
    j["per_class_ap"] = per;
  }
  if (a.confusion) {
    const auto cm = softpl::confusion_matrix(gt, dets, a.iou, a.score);
    std::vector<std::string> labels;
    for (const auto id : cm.category_ids) {
      auto it = std::find_if(gt.categories.begin(), gt.categories.end(),
                             [&](const softpl::CategoryRecord& c) { return c.id == id; });
      labels.push_back(it->name);
    }
    labels.push_back("background");
    std::cout << "\nconfusion (rows: ground truth, cols: predicted, iou>=" << a.iou
              << ", score>=" << a.score << "):\n";
    std::cout << std::setw(16) << "";
    for (const auto& l : labels) std::cout << std::setw(14) << l.substr(0, 13);
    std::cout << "\n";
    for (std::size_t i = 0; i < cm.counts.size(); ++i) {
      std::cout << std::left << std::setw(16) << labels[i].substr(0, 15) << std::right;
      for (auto v : cm.counts[i]) std::cout << std::setw(14) << v;
      std::cout << "\n";
    }
    j["confusion"] = {{"labels", labels}, {"counts", cm.counts}, {"row_percent", cm.row_percentages()},
                      {"iou", a.iou}, {"score", a.score}};
  }
  if (!a.out.empty()) write_or_print(a.out, j.dump(2) + "\n");
  return kExitOk;
}

int run_simulate(SimulateArgs a, const GlobalOptions& g, const CLI::App& cmd) {
  softpl::SimConfig config = a.config;
  if (!a.preset.empty()) {
    if (a.preset != "noisy") throw softpl::ConfigError("unknown preset \"" + a.preset + "\"");
    const auto preset = softpl::noisy_preset();
    // Explicit flags win over the preset.
    if (!cmd.count("--seed")) config.seed = preset.seed;
    if (!cmd.count("--images")) config.num_images = preset.num_images;
    if (!cmd.count("--models")) config.num_models = preset.num_models;
    if (!cmd.count("--jitter")) config.jitter_sigma = preset.jitter_sigma;
    if (!cmd.count("--detect-prob")) config.detect_prob = preset.detect_prob;
    if (!cmd.count("--fp-rate")) config.false_positive_rate = preset.false_positive_rate;
  }
  spdlog::info("simulating {} images, {} models, seed {}", config.num_images, config.num_models,
               config.seed);
  const auto sim = softpl::generate(config, g.thread_count());
  const auto paths = softpl::write_simulation(sim, a.out_dir);
  spdlog::info("wrote {} and {} detection files", (fs::path(a.out_dir) / "gt.json").string(),
               paths.size());
  return kExitOk;
}

int run_score_pl(const ScorePlArgs& a) {
  const auto gt = softpl::load_dataset(a.gt);
  const auto pseudo = softpl::load_dataset(a.pseudo);
  const auto q = softpl::score_pseudo_labels(gt, pseudo, a.iou);
  std::cout << std::fixed << std::setprecision(4) << "precision " << q.precision << "\nrecall    "
            << q.recall << "\nf1        " << q.f1 << "\n";
  if (!a.out.empty()) {
    softpl::Json j{{"precision", q.precision}, {"recall", q.recall}, {"f1", q.f1},
                   {"tp", q.true_positives},   {"fp", q.false_positives}, {"fn", q.false_negatives}};
    write_or_print(a.out, j.dump(2) + "\n");
  }
  return kExitOk;
}

int run_stats(const StatsArgs& a) {
  const auto report = softpl::stats_report(softpl::load_dataset(a.in));
  std::cout << (a.json ? report.to_json().dump(2) + "\n" : report.to_text());
  if (!a.out.empty()) write_or_print(a.out, report.to_json().dump(2) + "\n");
  return kExitOk;
}

int run_mmd(const MmdArgs& a, const GlobalOptions& g) {
  if (a.kernel != "rbf") throw softpl::ConfigError("only the rbf kernel is supported");
  softpl::MmdOptions opts;
  opts.threads = g.thread_count();
  if (a.bandwidth != "median") {
    try {
      std::size_t pos = 0;
      opts.bandwidth = std::stod(a.bandwidth, &pos);
      if (pos != a.bandwidth.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw softpl::ConfigError("--bandwidth expects a number or \"median\"");
    }
  }
  const auto x = softpl::load_features(a.a);
  const auto y = softpl::load_features(a.b);
  const auto s = softpl::mmd_repeated(x, y, a.repeats, a.subsample, a.seed, opts);
  std::cout << std::fixed << std::setprecision(4);
  for (std::size_t i = 0; i < s.runs.size(); ++i) std::cout << "Run " << i + 1 << "  " << s.runs[i] << "\n";
  std::cout << "Mean +- Std  " << s.mean << " +- " << s.stddev << "\n";
  if (!a.out.empty()) {
    softpl::Json j{{"runs", s.runs}, {"mean", s.mean}, {"std", s.stddev}};
    write_or_print(a.out, j.dump(2) + "\n");
  }
  return kExitOk;
}

void setup_logging(const std::string& verbosity) {
  auto logger = spdlog::stderr_logger_mt("softpl");
  logger->set_pattern("[%l] %v");
  if (verbosity == "quiet") logger->set_level(spdlog::level::warn);
  else if (verbosity == "debug") logger->set_level(spdlog::level::debug);
  else if (verbosity == "info") logger->set_level(spdlog::level::info);
  else throw softpl::ConfigError("--verbosity must be quiet, info or debug");
  spdlog::set_default_logger(logger);
}

/// Logs every option of the root and the selected subcommand with its final value.
void echo_options(const CLI::App& app) {
  auto dump = [](const CLI::App& a, const std::string& prefix) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config") continue;
      std::string value;
      if (opt->count() > 0) {
        for (const auto& r : opt->results()) value += (value.empty() ? "" : " ") + r;
      } else {
        value = opt->get_default_str();
      }
      spdlog::info("  {}{} = {}", prefix, name, value);
    }
  };
  spdlog::info("effective options:");
  dump(app, "");
  for (const CLI::App* sub : app.get_subcommands()) dump(*sub, sub->get_name() + ".");
}

/// Picks the config-file parser from the --config argument's extension.
void choose_config_format(CLI::App& app, int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    std::string path;
    if (arg == "--config" && i + 1 < argc) path = argv[i + 1];
    else if (arg.rfind("--config=", 0) == 0) path = arg.substr(9);
    if (!path.empty()) {
      if (fs::path(path).extension() == ".json") app.config_formatter(std::make_shared<softpl::cli::JsonConfig>());
      return;
    }
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble soft pseudo-labeling: fuse detector outputs, evaluate, simulate, measure domain shift."};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--verbosity", g.verbosity, "Log level: quiet, info or debug")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (positive integer or auto)")->capture_default_str();
  app.set_config("--config", "", "Config file (TOML, or JSON when the name ends in .json); flags override it");

  // fuse
  FuseArgs fa;
  auto* fuse = app.add_subcommand("fuse", "Fuse per-model detections into soft pseudo-labels");
  fuse->add_option("--det", fa.dets, "Detection results file and model id, as <path>:<model_id> (repeatable)")
      ->required();
  fuse->add_option("--images", fa.images, "COCO dataset JSON providing the images array")->required();
  fuse->add_option("--categories", fa.categories, "COCO dataset JSON providing categories (default: --images)");
  fuse->add_option("--theta", fa.config.theta, "IoU threshold for clustering")->capture_default_str();
  fuse->add_option("--alpha", fa.config.alpha, "Spread decay factor")->capture_default_str();
  fuse->add_option("--beta", fa.config.beta, "Model agreement bonus factor")->capture_default_str();
  fuse->add_option("--min-models,--min_models", fa.config.min_models, "Minimum distinct models per cluster")->capture_default_str();
  fuse->add_option("--tau", fa.config.tau_initial, "Initial confidence filter")->capture_default_str();
  fuse->add_option("--tau-final,--tau_final", fa.config.tau_final, "Final confidence threshold")->capture_default_str();
  fuse->add_option("--p", fa.config.p, "Training-weight exponent")->capture_default_str();
  fuse->add_option("--mode", fa.mode, "Scoring mode: soft or hard")
      ->check(CLI::IsMember({"soft", "hard"}))
      ->capture_default_str();
  fuse->add_flag("--release", fa.release, "Use the release threshold (tau-final 0.4) unless --tau-final is given");
  fuse->add_option("--keep-empty-images", fa.keep_empty_images,
                   "Keep images without pseudo-labels in the output (true|false)")
      ->capture_default_str();
  fuse->add_option("--out", fa.out, "Output pseudo-label dataset path")->required();
  fuse->add_flag("--seedless", fa.seedless, "Reserved; the pipeline is deterministic");

  // eval
  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "COCO-style mAP of detections against ground truth");
  eval->add_option("--gt", ea.gt, "Ground-truth COCO dataset")->required();
  eval->add_option("--det", ea.det, "Detection results array or pseudo-label dataset")->required();
  eval->add_flag("--per-class", ea.per_class, "Report per-class AP");
  eval->add_flag("--confusion", ea.confusion, "Report an IoU-matched confusion matrix");
  eval->add_option("--iou", ea.iou, "Confusion matrix IoU threshold")->capture_default_str();
  eval->add_option("--score", ea.score, "Confusion matrix score threshold")->capture_default_str();
  eval->add_option("--out", ea.out, "Write metrics as JSON");

  // simulate
  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Generate synthetic ground truth and noisy detector outputs");
  sim->add_option("--seed", sa.config.seed, "Random seed")->capture_default_str();
  sim->add_option("--images", sa.config.num_images, "Number of images")->capture_default_str();
  sim->add_option("--models", sa.config.num_models, "Number of simulated detectors")->capture_default_str();
  sim->add_option("--jitter", sa.config.jitter_sigma, "Per-corner Gaussian jitter (pixels)")->capture_default_str();
  sim->add_option("--detect-prob", sa.config.detect_prob, "Per-model recall")->capture_default_str();
  sim->add_option("--fp-rate", sa.config.false_positive_rate, "Expected false positives per image per model")
      ->capture_default_str();
  sim->add_option("--width", sa.config.image_width, "Image width")->capture_default_str();
  sim->add_option("--height", sa.config.image_height, "Image height")->capture_default_str();
  sim->add_option("--preset", sa.preset, "Named preset (noisy); explicit flags override it");
  sim->add_option("--out-dir", sa.out_dir, "Output directory")->required();

  // score-pl
  ScorePlArgs pa;
  auto* score_pl = app.add_subcommand("score-pl", "Precision/recall/F1 of pseudo-labels against ground truth");
  score_pl->add_option("--gt", pa.gt, "Ground-truth COCO dataset")->required();
  score_pl->add_option("--pseudo", pa.pseudo, "Pseudo-label dataset")->required();
  score_pl->add_option("--iou", pa.iou, "Match IoU threshold")->capture_default_str();
  score_pl->add_option("--out", pa.out, "Write the scores as JSON");

  // stats
  StatsArgs ta;
  auto* stats = app.add_subcommand("stats", "Category distribution of a pseudo-label dataset");
  stats->add_option("--in", ta.in, "Pseudo-label dataset")->required();
  stats->add_flag("--json", ta.json, "Print JSON instead of a table");
  stats->add_option("--out", ta.out, "Write the report as JSON");

  // mmd
  MmdArgs ma;
  auto* mmd = app.add_subcommand("mmd", "Maximum mean discrepancy between two feature files");
  mmd->add_option("--a", ma.a, "First feature file (CSV or F32 binary)")->required();
  mmd->add_option("--b", ma.b, "Second feature file")->required();
  mmd->add_option("--bandwidth", ma.bandwidth, "RBF bandwidth, or median")->capture_default_str();
  mmd->add_option("--kernel", ma.kernel, "Kernel (rbf)")->capture_default_str();
  mmd->add_option("--repeats", ma.repeats, "Number of subsampled runs")->capture_default_str();
  mmd->add_option("--subsample", ma.subsample, "Fraction of each sample per run")->capture_default_str();
  mmd->add_option("--seed", ma.seed, "Subsampling seed")->capture_default_str();
  mmd->add_option("--out", ma.out, "Write runs, mean and std as JSON");

  auto* defaults = app.add_subcommand("defaults", "Print the default fusion configuration as JSON");
  defaults->alias("print-defaults");

  choose_config_format(app, argc, argv);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code == 0) return kExitOk;
    std::cerr << "\n" << app.help();
    return kExitConfig;
  }

  try {
    setup_logging(g.verbosity);
    echo_options(app);
    if (*defaults) {
      std::cout << softpl::print_defaults();
      return kExitOk;
    }
    g.thread_count();
    if (*fuse) return run_fuse(fa, g, *fuse);
    if (*eval) return run_eval(ea, g);
    if (*sim) return run_simulate(sa, g, *sim);
    if (*score_pl) return run_score_pl(pa);
    if (*stats) return run_stats(ta);
    if (*mmd) return run_mmd(ma, g);
  } catch (const softpl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const softpl::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
