#pragma once

#include "sacn/augmentation.hpp"
#include "sacn/autodiff.hpp"
#include "sacn/gat.hpp"
#include "sacn/graph.hpp"
#include "sacn/objectives.hpp"
#include "sacn/optimizer.hpp"
#include "sacn/pseudolabels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <future>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sacn {

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.6;
  double attention_dropout = 0.6;
  Index heads = 8;
  Index hidden_per_head = 6;
  double leaky_slope = 0.2;
  int epochs_pretrain = 100;
  int epochs_max = 1000;
  int patience = 100;
  /// false: fixed epoch budget, no validation labels used.
  bool use_validation = true;
  LossWeights weights;
  bool include_self_pairs = true;
  double mask_rate = 0.3;
  /// Renormalization filter strength; nullopt picks a default from the
  /// dataset name and label rate.
  std::optional<int> filter_strength;
  QuotaSchedule quota;
  /// When set, a fresh class-balanced split is drawn for every seed.
  std::optional<double> label_rate;
  Index val_size = 500;
  Index test_size = 1000;
  std::vector<std::uint64_t> seeds{0};

  GatConfig model(Index num_features, Index num_classes) const {
    GatConfig g;
    g.num_features = num_features;
    g.num_classes = num_classes;
    g.heads = heads;
    g.hidden_per_head = hidden_per_head;
    g.leaky_slope = leaky_slope;
    g.dropout = dropout;
    g.attention_dropout = attention_dropout;
    return g;
  }

  void validate() const {
    auto unit = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    if (weight_decay < 0) throw std::invalid_argument("TrainConfig: negative weight_decay");
    if (!unit(dropout) || !unit(attention_dropout) || !unit(mask_rate)) {
      throw std::invalid_argument("TrainConfig: rates must lie in [0, 1]");
    }
    if (epochs_pretrain < 0 || epochs_max < 0 || epochs_pretrain > epochs_max) {
      throw std::invalid_argument("TrainConfig: need 0 <= epochs_pretrain <= epochs_max");
    }
    if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (heads < 1 || hidden_per_head < 1) throw std::invalid_argument("TrainConfig: bad architecture");
    if (filter_strength && *filter_strength < 0) throw std::invalid_argument("TrainConfig: negative filter strength");
    if (label_rate && !(*label_rate > 0 && *label_rate <= 1)) {
      throw std::invalid_argument("TrainConfig: label_rate must lie in (0, 1]");
    }
    if (seeds.empty()) throw std::invalid_argument("TrainConfig: at least one seed is required");
    weights.validate();
    quota.validate();
  }
};

/// Filter strength by label rate: strong smoothing for the sparsest label
/// rates, weak smoothing for the densest tabulated ones.
inline int default_filter_strength(const std::string& dataset, double label_rate) {
  std::string name = dataset;
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "pubmed") {
    if (label_rate <= 0.0003 + 1e-12) return 15;
    if (label_rate <= 0.0005 + 1e-12) return 8;
    return 3;
  }
  if (label_rate <= 0.005 + 1e-12) return 15;
  if (label_rate <= 0.01 + 1e-12) return 8;
  return 3;
}

/// Everything a training run reads, derived once from a bundle.
template <class T>
struct PreparedGraph {
  SmoothedFeatures<T> features;
  AttentionSupport support;
  ConsensusPairs pairs;
  std::vector<int> labels;
  Split split;
  std::vector<Index> unlabeled;  // nodes outside the training set
  Index num_classes = 0;
  Matrix<T> train_targets;
  int filter_strength = 0;
};

template <class T>
PreparedGraph<T> prepare(const GraphBundle& bundle, int filter_strength, bool include_self_pairs = true) {
  bundle.validate();
  PreparedGraph<T> g;
  CsrMatrix<T> raw;
  raw.pattern = bundle.features.pattern;
  raw.values.assign(bundle.features.values.begin(), bundle.features.values.end());
  g.features = SmoothedFeatures<T>(std::move(raw), renormalized_adjacency<T>(bundle.adjacency), filter_strength);
  g.support = AttentionSupport::from_adjacency(bundle.adjacency);
  g.pairs = ConsensusPairs::from_adjacency(bundle.adjacency, include_self_pairs);
  g.labels = bundle.labels;
  g.split = bundle.split;
  g.unlabeled = bundle.unlabeled_nodes();
  g.num_classes = bundle.num_classes;
  std::vector<int> train_labels;
  for (Index i : bundle.split.train) train_labels.push_back(bundle.labels[i]);
  g.train_targets = one_hot<T>(train_labels, bundle.num_classes);
  g.filter_strength = filter_strength;
  return g;
}

/// Fraction of `nodes` whose argmax prediction equals the true label.
template <class T>
double accuracy(const Matrix<T>& y, const std::vector<int>& labels, std::span<const Index> nodes) {
  if (nodes.empty()) throw std::invalid_argument("evaluate: empty index set");
  Index correct = 0;
  for (Index i : nodes) correct += argmax(y.row(i)) == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

/// Eval-mode accuracy on the weak (unaugmented) view.
template <class T>
double evaluate(const ModelParams<T>& params, const PreparedGraph<T>& graph, const GatConfig& model,
                std::span<const Index> nodes) {
  if (nodes.empty()) throw std::invalid_argument("evaluate: empty index set");
  return accuracy(predict(params, graph.features, graph.support, model), graph.labels, nodes);
}

struct EpochMetrics {
  int epoch = 0;
  int stage = 1;
  double l_sup = 0;
  std::optional<double> l_cor;
  std::optional<double> l_de;
  std::optional<double> l_w2s;
  double l_total = 0;
  std::optional<double> val_acc;
};

struct SelectionRecord {
  int epoch = 0;
  std::vector<Index> per_class_counts;
  double mean_confidence = 0;
};

struct RunReport {
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  std::vector<SelectionRecord> selections;
  int best_epoch = 0;
  double best_val_acc = 0;
  double test_acc = 0;
  bool stopped_early = false;
  double wall_seconds = 0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct TrainResult {
  ModelParams<T> params;
  RunReport report;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for (run seed, stream id).
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL));
}

}  // namespace detail

/// Two-stage training.
///
/// Epochs 1..epochs_pretrain minimize sup + alpha1 * sacn; later epochs add
/// alpha2 * w2s with pseudolabels refreshed every quota.round_length epochs
/// from eval-mode weak-view predictions. Each step draws fresh masks for
/// the two strong views, runs the three views through the shared encoder
/// and applies one Adam update. With validation, the parameters of the best
/// validation epoch are restored and training stops in stage two after
/// `patience` epochs without improvement.
template <class T>
TrainResult<T> train(const PreparedGraph<T>& graph, const TrainConfig& config, std::uint64_t seed,
                     const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  if (graph.split.train.empty()) throw std::invalid_argument("train: empty training set");
  if (config.use_validation && graph.split.val.empty()) {
    throw std::invalid_argument("train: validation protocol needs a validation set");
  }
  const auto start_time = std::chrono::steady_clock::now();
  const GatConfig model = config.model(graph.features.cols(), graph.num_classes);

  TrainResult<T> result;
  result.params = init_params<T>(model, detail::stream_seed(seed, 1));
  result.report.seed = seed;
  ModelParams<T>& params = result.params;
  RunReport& report = result.report;

  std::mt19937_64 mask_rng1(detail::stream_seed(seed, 2));
  std::mt19937_64 mask_rng2(detail::stream_seed(seed, 3));
  std::mt19937_64 dropout_rng(detail::stream_seed(seed, 4));

  auto param_ptrs = params.tensors();
  std::vector<const Matrix<T>*> const_ptrs(param_ptrs.begin(), param_ptrs.end());
  AdamState<T> adam = AdamState<T>::zeros_like(const_ptrs);
  AdamOptions adam_opts{config.learning_rate, config.weight_decay};

  ModelParams<T> best = params;
  double best_val = -1.0;
  int best_epoch = 0;
  PseudoLabelSet pseudo;
  const int stage_two_start = config.epochs_pretrain + 1;
  const LossWeights& w = config.weights;

  for (int epoch = 1; epoch <= config.epochs_max; ++epoch) {
    const bool stage_two = epoch >= stage_two_start;

    if (stage_two && w.alpha2 > 0 && (epoch - stage_two_start) % config.quota.round_length == 0) {
      const Matrix<T> y = predict(params, graph.features, graph.support, model);
      const auto available = argmax_counts(y, graph.unlabeled);
      const auto quota = quota_at(config.quota, epoch, stage_two_start, available);
      pseudo = select_class_aware(y, graph.unlabeled, quota);
      report.selections.push_back({epoch, pseudo.per_class_counts, pseudo.mean_confidence()});
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.stage = stage_two ? 2 : 1;

    const bool need_w2s = stage_two && w.alpha2 > 0;
    const bool need_strong = w.alpha1 > 0 || need_w2s;
    SmoothedFeatures<T> strong1, strong2;
    if (need_strong) {
      strong1 = apply_mask(graph.features, draw_mask_plan(graph.features.cols(), config.mask_rate, mask_rng1));
      strong2 = apply_mask(graph.features, draw_mask_plan(graph.features.cols(), config.mask_rate, mask_rng2));
    }

    ad::Tape<T> tape;
    const ModelVars<T> vars = bind(tape, params);
    const auto weak = forward_view<T>(graph.features, graph.support, vars, model, true, dropout_rng);
    ad::Var<T> sup = loss_sup(weak.y, graph.train_targets, graph.split.train);
    ad::Var<T> total = sup;
    m.l_sup = static_cast<double>(sup.scalar());

    if (need_strong) {
      const auto view1 = forward_view<T>(strong1, graph.support, vars, model, true, dropout_rng);
      const auto view2 = forward_view<T>(strong2, graph.support, vars, model, true, dropout_rng);
      if (w.alpha1 > 0) {
        const auto sacn = loss_sacn(view1.z, view2.z, graph.pairs, w.lambda);
        m.l_cor = static_cast<double>(sacn.cor.scalar());
        m.l_de = static_cast<double>(sacn.de.scalar());
        total = ad::add(total, ad::scalar_multiply(sacn.total, static_cast<T>(w.alpha1)));
      }
      if (need_w2s) {
        ad::Var<T> w2s = loss_w2s(pseudo, view1.y, view2.y);
        m.l_w2s = static_cast<double>(w2s.scalar());
        total = ad::add(total, ad::scalar_multiply(w2s, static_cast<T>(w.alpha2)));
      }
    }
    m.l_total = static_cast<double>(total.scalar());
    if (!std::isfinite(m.l_total)) {
      throw DivergenceError("train: loss became non-finite at epoch " + std::to_string(epoch) +
                            " (seed " + std::to_string(seed) + ")");
    }

    tape.backward(total);
    const auto leaves = vars.all();
    std::vector<const Matrix<T>*> grads;
    grads.reserve(leaves.size());
    for (const auto& leaf : leaves) grads.push_back(&leaf.grad());
    adam_step<T>(param_ptrs, grads, adam, adam_opts);

    if (config.use_validation) {
      const double val = evaluate(params, graph, model, graph.split.val);
      m.val_acc = val;
      if (val > best_val) {
        best_val = val;
        best_epoch = epoch;
        best = params;
      }
    }
    report.epochs.push_back(m);
    if (on_epoch) on_epoch(m);

    // Patience counts from the later of the best epoch and the stage switch,
    // so stage two always gets at least `patience` epochs.
    if (config.use_validation && stage_two &&
        epoch - std::max(best_epoch, config.epochs_pretrain) >= config.patience) {
      report.stopped_early = true;
      break;
    }
  }

  if (config.use_validation && best_epoch > 0) {
    params = best;
    report.best_epoch = best_epoch;
    report.best_val_acc = best_val;
  } else {
    report.best_epoch = static_cast<int>(report.epochs.size());
  }
  if (!graph.split.test.empty()) report.test_acc = evaluate(params, graph, model, graph.split.test);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return result;
}

struct RunFailure {
  std::uint64_t seed = 0;
  std::string message;
};

struct ExperimentReport {
  std::string dataset;
  TrainConfig config;
  int filter_strength = 0;
  Index parameter_count = 0;
  std::vector<RunReport> runs;
  std::vector<RunFailure> failures;
  double mean_test_acc = 0;
  double std_test_acc = 0;  // population standard deviation over runs
};

/// Worker count for run_experiment, from SACN_THREADS (default 1).
inline unsigned experiment_threads() {
  if (const char* env = std::getenv("SACN_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

/// Resolved filter strength for a bundle under `config`.
inline int resolve_filter_strength(const GraphBundle& bundle, const TrainConfig& config) {
  if (config.filter_strength) return *config.filter_strength;
  double rate = config.label_rate.value_or(
      bundle.num_nodes > 0 ? static_cast<double>(bundle.split.train.size()) / bundle.num_nodes : 0.0);
  return default_filter_strength(bundle.name, rate);
}

/// Trains once per seed and aggregates test accuracy. A failing run is
/// recorded and does not stop the others.
template <class T = double>
ExperimentReport run_experiment(const GraphBundle& bundle, const TrainConfig& config,
                                const std::function<void(std::uint64_t, const TrainResult<T>&)>& on_run = {}) {
  config.validate();
  ExperimentReport out;
  out.dataset = bundle.name;
  out.config = config;
  out.filter_strength = resolve_filter_strength(bundle, config);
  out.parameter_count =
      parameter_count(init_params<T>(config.model(bundle.num_features, bundle.num_classes), 0));

  std::optional<PreparedGraph<T>> shared;
  if (!config.label_rate) {
    if (bundle.split.train.empty()) throw std::invalid_argument("run_experiment: bundle has no split and no label rate was given");
    shared = prepare<T>(bundle, out.filter_strength, config.include_self_pairs);
  }

  auto run_one = [&](std::uint64_t seed) -> TrainResult<T> {
    if (shared) return train<T>(*shared, config, seed);
    const auto split = make_split(bundle, SplitSpec{*config.label_rate, config.val_size, config.test_size, seed});
    return train<T>(prepare<T>(split, out.filter_strength, config.include_self_pairs), config, seed);
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(experiment_threads(), config.seeds.size()));
  std::vector<std::optional<TrainResult<T>>> results(config.seeds.size());
  std::vector<std::string> errors(config.seeds.size());
  for (std::size_t begin = 0; begin < config.seeds.size(); begin += workers) {
    const std::size_t end = std::min(config.seeds.size(), begin + workers);
    std::vector<std::future<void>> jobs;
    for (std::size_t i = begin; i < end; ++i) {
      jobs.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred, [&, i] {
        try {
          results[i] = run_one(config.seeds[i]);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }));
    }
    for (auto& j : jobs) j.get();
  }

  for (std::size_t i = 0; i < config.seeds.size(); ++i) {
    if (results[i]) {
      if (on_run) on_run(config.seeds[i], *results[i]);
      out.runs.push_back(std::move(results[i]->report));
    } else {
      out.failures.push_back({config.seeds[i], errors[i]});
    }
  }
  if (!out.runs.empty()) {
    double total = 0;
    for (const auto& r : out.runs) total += r.test_acc;
    out.mean_test_acc = total / static_cast<double>(out.runs.size());
    double sq = 0;
    for (const auto& r : out.runs) sq += (r.test_acc - out.mean_test_acc) * (r.test_acc - out.mean_test_acc);
    out.std_test_acc = std::sqrt(sq / static_cast<double>(out.runs.size()));
  }
  return out;
}

struct AblationArm {
  std::string name;
  ExperimentReport report;
};

/// Full objective, sup + w2s (alpha1 = 0), and sup + sacn (alpha2 = 0).
template <class T = double>
std::vector<AblationArm> run_ablation(const GraphBundle& bundle, const TrainConfig& config) {
  std::vector<AblationArm> arms;
  TrainConfig no_sacn = config;
  no_sacn.weights.alpha1 = 0.0;
  TrainConfig no_w2s = config;
  no_w2s.weights.alpha2 = 0.0;
  arms.push_back({"sup+w2s", run_experiment<T>(bundle, no_sacn)});
  arms.push_back({"sup+sacn", run_experiment<T>(bundle, no_w2s)});
  arms.push_back({"full", run_experiment<T>(bundle, config)});
  return arms;
}

}  // namespace sacn
