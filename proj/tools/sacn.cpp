// sacn: train, ablate, generate, gradcheck.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include "sacn/sacn.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flags shared by train and ablate. Unset flags leave the config file (or
/// built-in defaults) untouched.
struct TrainFlags {
  std::string bundle;
  std::string config;
  std::string out = ".";
  std::optional<double> label_rate;
  std::optional<int> seeds;
  std::optional<int> filter_strength;
  std::optional<double> lambda;
  std::optional<double> alpha1;
  std::optional<double> alpha2;
  std::optional<double> mask_rate;
  std::optional<int> epochs_max;
  std::optional<int> epochs_pretrain;
  std::optional<int> patience;
  std::optional<long> val_size;
  std::optional<long> test_size;
  bool no_validation = false;
  bool quiet = false;

  void attach(CLI::App& cmd) {
    cmd.add_option("--bundle", bundle, "Graph bundle directory")->required();
    cmd.add_option("--config", config, "JSON defaults file (flags override it)");
    cmd.add_option("--out", out, "Output directory")->capture_default_str();
    cmd.add_option("--label-rate", label_rate, "Draw a class-balanced split per seed at this rate");
    cmd.add_option("--seeds", seeds, "Run seeds 0..N-1");
    cmd.add_option("--c", filter_strength, "Feature smoothing strength");
    cmd.add_option("--lambda", lambda, "Decorrelation weight");
    cmd.add_option("--alpha1", alpha1, "Consensus objective weight");
    cmd.add_option("--alpha2", alpha2, "Weak-to-strong objective weight");
    cmd.add_option("--mask-rate", mask_rate, "Fraction of feature columns masked per strong view");
    cmd.add_option("--epochs-max", epochs_max, "Epoch limit");
    cmd.add_option("--epochs-pretrain", epochs_pretrain, "Stage-one epochs");
    cmd.add_option("--patience", patience, "Early-stopping patience");
    cmd.add_option("--val-size", val_size, "Validation nodes when drawing splits");
    cmd.add_option("--test-size", test_size, "Test nodes when drawing splits");
    cmd.add_flag("--no-validation", no_validation, "Fixed epoch budget, no validation labels");
    cmd.add_flag("-q,--quiet", quiet, "Suppress per-run progress lines");
  }

  sacn::TrainConfig resolve() const {
    sacn::TrainConfig c;
    if (!config.empty()) {
      if (!fs::exists(config)) throw UsageError("config file not found: " + config);
      c = sacn::load_config(config);
    }
    if (seeds) {
      if (*seeds < 1) throw UsageError("--seeds must be at least 1");
      c.seeds.clear();
      for (int s = 0; s < *seeds; ++s) c.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (label_rate) c.label_rate = *label_rate;
    if (filter_strength) c.filter_strength = *filter_strength;
    if (lambda) c.weights.lambda = *lambda;
    if (alpha1) c.weights.alpha1 = *alpha1;
    if (alpha2) c.weights.alpha2 = *alpha2;
    if (mask_rate) c.mask_rate = *mask_rate;
    if (epochs_max) c.epochs_max = *epochs_max;
    if (epochs_pretrain) c.epochs_pretrain = *epochs_pretrain;
    if (patience) c.patience = *patience;
    if (val_size) c.val_size = *val_size;
    if (test_size) c.test_size = *test_size;
    if (no_validation) c.use_validation = false;
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  sacn::GraphBundle load() const {
    if (!fs::is_directory(bundle)) throw UsageError("bundle not found: " + bundle);
    return sacn::load_bundle(bundle);
  }
};

fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

int cmd_train(const TrainFlags& flags) {
  const auto config = flags.resolve();
  const auto bundle = flags.load();
  const fs::path out = prepare_out(flags.out);
  const std::string config_text = sacn::to_json(config).dump();

  const auto report = sacn::run_experiment<double>(
      bundle, config, [&](std::uint64_t seed, const sacn::TrainResult<double>& r) {
        sacn::save_checkpoint(out / ("checkpoint_seed" + std::to_string(seed) + ".bin"), r.params,
                              config_text);
        if (!flags.quiet) {
          std::printf("seed %llu: test_acc %.4f best_epoch %d epochs %zu\n",
                      static_cast<unsigned long long>(seed), r.report.test_acc, r.report.best_epoch,
                      r.report.epochs.size());
        }
      });

  sacn::write_text(out / "report.json", sacn::to_json(report).dump(2) + "\n");
  sacn::write_text(out / "metrics.jsonl", sacn::metrics_jsonl(report));
  sacn::write_text(out / "timing.json", sacn::timing_json(report).dump(2) + "\n");
  for (const auto& f : report.failures) {
    std::fprintf(stderr, "seed %llu failed: %s\n", static_cast<unsigned long long>(f.seed), f.message.c_str());
  }
  std::printf("%s: mean test_acc %.4f std %.4f over %zu run(s)\n", report.dataset.c_str(),
              report.mean_test_acc, report.std_test_acc, report.runs.size());
  return report.runs.empty() ? kExitFailure : kExitOk;
}

int cmd_ablate(const TrainFlags& flags) {
  const auto config = flags.resolve();
  const auto bundle = flags.load();
  const fs::path out = prepare_out(flags.out);
  const auto arms = sacn::run_ablation<double>(bundle, config);
  const std::string csv = sacn::ablation_csv(arms);
  sacn::write_text(out / "ablation.csv", csv);
  sacn::write_text(out / "ablation.json", sacn::to_json(arms).dump(2) + "\n");
  std::fputs(csv.c_str(), stdout);
  for (const auto& a : arms) {
    if (a.report.runs.empty()) return kExitFailure;
  }
  return kExitOk;
}

struct GenerateFlags {
  sacn::SbmSpec spec{.num_nodes = 200, .num_classes = 2, .p_in = 0.1, .p_out = 0.01,
                     .num_features = 16, .feature_flip = 0.0, .seed = 0};
  double label_rate = 0.1;
  std::optional<long> val_size;
  std::optional<long> test_size;
  std::string out;
};

int cmd_generate(const GenerateFlags& f) {
  sacn::GraphBundle g;
  try {
    g = sacn::generate_sbm(f.spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (f.label_rate > 0) {
    const auto per_class = std::llround(f.label_rate * static_cast<double>(g.num_nodes) /
                                        static_cast<double>(g.num_classes));
    const long rest = static_cast<long>(g.num_nodes - per_class * g.num_classes);
    sacn::SplitSpec split{f.label_rate, f.val_size.value_or(rest / 3),
                          f.test_size.value_or(rest - rest / 3), f.spec.seed};
    try {
      g = sacn::make_split(std::move(g), split);
    } catch (const sacn::GraphError& e) {
      throw UsageError(e.what());
    }
  }
  sacn::save_bundle(g, f.out);
  std::printf("wrote %s: %lld nodes, %lld edges, %lld features, %lld classes\n", f.out.c_str(),
              static_cast<long long>(g.num_nodes), static_cast<long long>(g.num_edges()),
              static_cast<long long>(g.num_features), static_cast<long long>(g.num_classes));
  return kExitOk;
}

int cmd_gradcheck(double eps, std::uint64_t seed) {
  if (!(eps > 0)) throw UsageError("--eps must be positive");
  constexpr double kTolerance = 1e-4;
  const auto start = std::chrono::steady_clock::now();
  const auto results = sacn::run_gradcheck(eps, seed);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_relative_error < kTolerance;
    ok = ok && pass;
    std::printf("%-5s max_rel_error %.3e %s\n", r.term.c_str(), r.max_relative_error, pass ? "ok" : "FAIL");
  }
  std::printf("elapsed %.3f s\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-aware consensus network for semi-supervised node classification"};
  app.require_subcommand(1);

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "Train over one or more seeds and write a report");
  train_flags.attach(*train);

  TrainFlags ablate_flags;
  auto* ablate = app.add_subcommand("ablate", "Compare full, sup+w2s and sup+sacn objectives");
  ablate_flags.attach(*ablate);

  GenerateFlags gen;
  auto* generate = app.add_subcommand("generate", "Write a stochastic block model bundle");
  generate->add_option("--n", gen.spec.num_nodes, "Nodes")->capture_default_str();
  generate->add_option("--k", gen.spec.num_classes, "Classes")->capture_default_str();
  generate->add_option("--p-in", gen.spec.p_in, "Within-class edge probability")->capture_default_str();
  generate->add_option("--p-out", gen.spec.p_out, "Between-class edge probability")->capture_default_str();
  generate->add_option("--m", gen.spec.num_features, "Feature dimensions")->capture_default_str();
  generate->add_option("--flip", gen.spec.feature_flip, "Feature bit flip probability")->capture_default_str();
  generate->add_option("--seed", gen.spec.seed, "Random seed")->capture_default_str();
  generate->add_option("--label-rate", gen.label_rate, "Training label rate for splits.json (0: no split)")
      ->capture_default_str();
  generate->add_option("--val-size", gen.val_size, "Validation nodes (default: a third of the rest)");
  generate->add_option("--test-size", gen.test_size, "Test nodes (default: the remainder)");
  generate->add_option("--out", gen.out, "Bundle directory")->required();

  double eps = 1e-5;
  std::uint64_t gc_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss term");
  gradcheck->add_option("--eps", eps, "Central difference step")->capture_default_str();
  gradcheck->add_option("--seed", gc_seed, "Fixture seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags);
    if (*ablate) return cmd_ablate(ablate_flags);
    if (*generate) return cmd_generate(gen);
    if (*gradcheck) return cmd_gradcheck(eps, gc_seed);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
