#pragma once

// JSON, JSONL and CSV views of configs and training results.

#include "sacn/bundle_io.hpp"
#include "sacn/trainer.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sacn {

inline constexpr const char* kReportFormat = "sacn-report/1";

using Json = nlohmann::ordered_json;

inline Json to_json(const TrainConfig& c) {
  Json j;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["dropout"] = c.dropout;
  j["attention_dropout"] = c.attention_dropout;
  j["heads"] = c.heads;
  j["hidden_per_head"] = c.hidden_per_head;
  j["leaky_slope"] = c.leaky_slope;
  j["epochs_pretrain"] = c.epochs_pretrain;
  j["epochs_max"] = c.epochs_max;
  j["patience"] = c.patience;
  j["use_validation"] = c.use_validation;
  j["lambda"] = c.weights.lambda;
  j["alpha1"] = c.weights.alpha1;
  j["alpha2"] = c.weights.alpha2;
  j["include_self_pairs"] = c.include_self_pairs;
  j["mask_rate"] = c.mask_rate;
  j["filter_strength"] = c.filter_strength ? Json(*c.filter_strength) : Json(nullptr);
  j["quota"] = {{"initial_fraction", c.quota.initial_fraction},
                {"growth_per_round", c.quota.growth_per_round},
                {"cap_fraction", c.quota.cap_fraction},
                {"round_length", c.quota.round_length}};
  j["label_rate"] = c.label_rate ? Json(*c.label_rate) : Json(nullptr);
  j["val_size"] = c.val_size;
  j["test_size"] = c.test_size;
  j["seeds"] = c.seeds;
  return j;
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Overlays the keys present in `j` onto `base`. Unknown keys are errors so
/// that typos in config files do not pass silently.
inline TrainConfig config_from_json(const Json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "learning_rate") base.learning_rate = v.get<double>();
      else if (key == "weight_decay") base.weight_decay = v.get<double>();
      else if (key == "dropout") base.dropout = v.get<double>();
      else if (key == "attention_dropout") base.attention_dropout = v.get<double>();
      else if (key == "heads") base.heads = v.get<Index>();
      else if (key == "hidden_per_head") base.hidden_per_head = v.get<Index>();
      else if (key == "leaky_slope") base.leaky_slope = v.get<double>();
      else if (key == "epochs_pretrain") base.epochs_pretrain = v.get<int>();
      else if (key == "epochs_max") base.epochs_max = v.get<int>();
      else if (key == "patience") base.patience = v.get<int>();
      else if (key == "use_validation") base.use_validation = v.get<bool>();
      else if (key == "lambda") base.weights.lambda = v.get<double>();
      else if (key == "alpha1") base.weights.alpha1 = v.get<double>();
      else if (key == "alpha2") base.weights.alpha2 = v.get<double>();
      else if (key == "include_self_pairs") base.include_self_pairs = v.get<bool>();
      else if (key == "mask_rate") base.mask_rate = v.get<double>();
      else if (key == "filter_strength") base.filter_strength = v.is_null() ? std::nullopt : std::optional<int>(v.get<int>());
      else if (key == "label_rate") base.label_rate = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
      else if (key == "val_size") base.val_size = v.get<Index>();
      else if (key == "test_size") base.test_size = v.get<Index>();
      else if (key == "seeds") base.seeds = v.get<std::vector<std::uint64_t>>();
      else if (key == "quota") {
        for (const auto& [qk, qv] : v.items()) {
          if (qk == "initial_fraction") base.quota.initial_fraction = qv.get<double>();
          else if (qk == "growth_per_round") base.quota.growth_per_round = qv.get<double>();
          else if (qk == "cap_fraction") base.quota.cap_fraction = qv.get<double>();
          else if (qk == "round_length") base.quota.round_length = qv.get<int>();
          else throw ConfigError("config: unknown quota key '" + qk + "'");
        }
      } else if (key == "dataset" || key == "description") {
        // informational
      } else {
        throw ConfigError("config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

namespace detail {
inline Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
}  // namespace detail

inline Json to_json(const EpochMetrics& m) {
  Json j;
  j["epoch"] = m.epoch;
  j["stage"] = m.stage;
  j["l_sup"] = m.l_sup;
  j["l_cor"] = detail::optional_number(m.l_cor);
  j["l_de"] = detail::optional_number(m.l_de);
  j["l_w2s"] = detail::optional_number(m.l_w2s);
  j["l_total"] = m.l_total;
  j["val_acc"] = detail::optional_number(m.val_acc);
  return j;
}

/// Run summary. Wall time is left out so that reports are reproducible
/// byte for byte; see timing_json.
inline Json to_json(const RunReport& r, bool with_curves = true) {
  Json j;
  j["seed"] = r.seed;
  j["epochs_run"] = r.epochs.size();
  j["best_epoch"] = r.best_epoch;
  j["best_val_acc"] = r.best_val_acc;
  j["test_acc"] = r.test_acc;
  j["stopped_early"] = r.stopped_early;
  Json sel = Json::array();
  for (const auto& s : r.selections) {
    sel.push_back({{"epoch", s.epoch}, {"per_class", s.per_class_counts}, {"mean_confidence", s.mean_confidence}});
  }
  j["pseudolabel_rounds"] = std::move(sel);
  if (with_curves) {
    Json curves = {{"l_sup", Json::array()}, {"l_cor", Json::array()}, {"l_de", Json::array()},
                   {"l_w2s", Json::array()}, {"l_total", Json::array()}, {"val_acc", Json::array()}};
    for (const auto& m : r.epochs) {
      curves["l_sup"].push_back(m.l_sup);
      curves["l_cor"].push_back(detail::optional_number(m.l_cor));
      curves["l_de"].push_back(detail::optional_number(m.l_de));
      curves["l_w2s"].push_back(detail::optional_number(m.l_w2s));
      curves["l_total"].push_back(m.l_total);
      curves["val_acc"].push_back(detail::optional_number(m.val_acc));
    }
    j["curves"] = std::move(curves);
  }
  return j;
}

inline Json to_json(const ExperimentReport& e, bool with_curves = true) {
  Json j;
  j["format"] = kReportFormat;
  j["dataset"] = e.dataset;
  j["config"] = to_json(e.config);
  j["filter_strength"] = e.filter_strength;
  j["parameter_count"] = e.parameter_count;
  j["num_runs"] = e.runs.size();
  j["mean_test_acc"] = e.mean_test_acc;
  j["std_test_acc"] = e.std_test_acc;
  Json runs = Json::array();
  for (const auto& r : e.runs) runs.push_back(to_json(r, with_curves));
  j["runs"] = std::move(runs);
  Json failures = Json::array();
  for (const auto& f : e.failures) failures.push_back({{"seed", f.seed}, {"error", f.message}});
  j["failures"] = std::move(failures);
  return j;
}

inline Json timing_json(const ExperimentReport& e) {
  Json j;
  j["format"] = kReportFormat;
  Json runs = Json::array();
  for (const auto& r : e.runs) runs.push_back({{"seed", r.seed}, {"wall_seconds", r.wall_seconds}});
  j["runs"] = std::move(runs);
  return j;
}

/// One line per epoch per run.
inline std::string metrics_jsonl(const ExperimentReport& e) {
  std::string out;
  for (const auto& r : e.runs) {
    for (const auto& m : r.epochs) {
      Json j = to_json(m);
      j["seed"] = r.seed;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

/// arm,mean_test_acc,std_test_acc,runs,failures
inline std::string ablation_csv(const std::vector<AblationArm>& arms) {
  std::ostringstream out;
  out << "arm,alpha1,alpha2,mean_test_acc,std_test_acc,runs,failures\n";
  for (const auto& a : arms) {
    out << a.name << ',' << format_decimal(a.report.config.weights.alpha1) << ','
        << format_decimal(a.report.config.weights.alpha2) << ',' << format_decimal(a.report.mean_test_acc) << ','
        << format_decimal(a.report.std_test_acc) << ',' << a.report.runs.size() << ','
        << a.report.failures.size() << '\n';
  }
  return out.str();
}

inline Json to_json(const std::vector<AblationArm>& arms) {
  Json j;
  j["format"] = kReportFormat;
  Json list = Json::array();
  for (const auto& a : arms) {
    Json arm = to_json(a.report, false);
    arm["arm"] = a.name;
    list.push_back(std::move(arm));
  }
  j["arms"] = std::move(list);
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace sacn
