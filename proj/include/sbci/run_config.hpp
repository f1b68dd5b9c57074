#pragma once

// One JSON file drives every command. Missing keys keep their defaults;
// unknown keys are reported as violations. Example:
//
//   {
//     "paths": {"raw": "train_raw.sbta", "test_raw": "test_raw.sbta",
//               "features": "train.sbta", "test_features": "test.sbta",
//               "checkpoint": "model", "report": "report.jsonl"},
//     "scheme": "ovr",
//     "seed": 7,
//     "threads": 1,
//     "folds": 5,
//     "literal_l1": false,
//     "synth": {"trials_per_class": 60, "test_trials_per_class": 60},
//     "preprocess": {"filter_order": 5, "f_lo": 7, "f_hi": 30},
//     "train": {"epochs": 25, "pair_subsample": 0},
//     "arch": {}
//   }

#include <fstream>
#include <json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sbci/data/synth.hpp"
#include "sbci/decomposition.hpp"
#include "sbci/preprocess.hpp"
#include "sbci/siamese.hpp"

namespace sbci {

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"lr", c.lr},
                     {"margin", c.margin},
                     {"pair_subsample", c.pair_subsample},
                     {"validation_fraction", c.validation_fraction},
                     {"calibrate_threshold", c.calibrate_threshold},
                     {"reference_cap", c.reference_cap}};
  j["threshold"] = c.threshold ? nlohmann::json(*c.threshold) : nlohmann::json();
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.margin = j.value("margin", c.margin);
  c.pair_subsample = j.value("pair_subsample", c.pair_subsample);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.calibrate_threshold = j.value("calibrate_threshold", c.calibrate_threshold);
  c.reference_cap = j.value("reference_cap", c.reference_cap);
  if (j.contains("threshold") && !j.at("threshold").is_null()) c.threshold = j.at("threshold").get<double>();
}

struct Paths {
  std::string raw = "train_raw.sbta";
  std::string test_raw = "test_raw.sbta";
  std::string features = "train.sbta";
  std::string test_features = "test.sbta";
  std::string checkpoint = "model";
  std::string report = "report.jsonl";
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Paths, raw, test_raw, features, test_features, checkpoint, report)

struct RunConfig {
  Paths paths;
  std::string scheme = "ovr";  // "ovr", "ovo" or a coding-matrix file
  std::uint64_t seed = 7;
  std::size_t threads = 1;
  std::size_t folds = 5;
  bool literal_l1 = false;
  data::SynthConfig synth = data::default_synth_config();
  std::size_t test_trials_per_class = 60;
  PreprocessConfig preprocess;
  TrainConfig train;
  ArchSpec arch;

  /// Seed fans out to the generator and training so one flag reseeds a run.
  void apply_seed(std::uint64_t s) {
    seed = s;
    synth.seed = s;
    train.seed = s;
  }

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (scheme.empty()) v.push_back("scheme must be ovr, ovo or a matrix file path");
    if (threads < 1) v.push_back("threads must be >= 1");
    if (folds < 2) v.push_back("folds must be >= 2");
    for (auto& s : synth.violations()) v.push_back(s);
    for (auto& s : preprocess.violations(synth.fs)) v.push_back(s);
    for (auto& s : train.violations()) v.push_back(s);
    for (auto& s : arch.violations()) v.push_back(s);
    return v;
  }
};

namespace detail {

inline void unknown_keys(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where,
                         std::vector<std::string>& out) {
  if (!j.is_object()) {
    out.push_back(where + " must be an object");
    return;
  }
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) out.push_back("unknown key " + (where.empty() ? "" : where + ".") + key);
}

template <typename T>
std::set<std::string> keys_of(const T& defaults) {
  std::set<std::string> s;
  const nlohmann::json j = defaults;
  for (const auto& [key, _] : j.items()) s.insert(key);
  return s;
}

}  // namespace detail

/// Parses a config document; every problem found (unknown keys, wrong
/// types, violated constraints) is reported together in one ConfigError.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  std::vector<std::string> problems;
  detail::unknown_keys(j, {"paths", "scheme", "seed", "threads", "folds", "literal_l1", "synth", "preprocess",
                           "train", "arch"},
                       "", problems);
  auto section = [&](const char* key, auto& target, std::set<std::string> known) {
    if (!j.is_object() || !j.contains(key)) return;
    detail::unknown_keys(j.at(key), known, key, problems);
    try {
      target = j.at(key).get<std::remove_reference_t<decltype(target)>>();
    } catch (const nlohmann::json::exception& e) {
      problems.push_back(std::string(key) + ": " + e.what());
    }
  };
  auto scalar = [&](const char* key, auto& target) {
    if (!j.is_object() || !j.contains(key)) return;
    try {
      target = j.at(key).get<std::remove_reference_t<decltype(target)>>();
    } catch (const nlohmann::json::exception& e) {
      problems.push_back(std::string(key) + ": " + e.what());
    }
  };
  section("paths", c.paths, detail::keys_of(Paths{}));
  section("preprocess", c.preprocess, detail::keys_of(PreprocessConfig{}));
  section("train", c.train, detail::keys_of(TrainConfig{}));
  section("arch", c.arch, detail::keys_of(ArchSpec{}));
  if (j.is_object() && j.contains("synth")) {
    auto known = detail::keys_of(c.synth);
    known.insert("test_trials_per_class");
    detail::unknown_keys(j.at("synth"), known, "synth", problems);
    try {
      from_json(j.at("synth"), c.synth);
      c.test_trials_per_class = j.at("synth").value("test_trials_per_class", c.test_trials_per_class);
    } catch (const nlohmann::json::exception& e) {
      problems.push_back(std::string("synth: ") + e.what());
    }
  }
  scalar("scheme", c.scheme);
  scalar("threads", c.threads);
  scalar("folds", c.folds);
  scalar("literal_l1", c.literal_l1);
  std::uint64_t seed = c.seed;
  scalar("seed", seed);
  // An explicit synth.seed wins over the top-level seed.
  const auto synth_seed = c.synth.seed;
  c.apply_seed(seed);
  if (j.is_object() && j.contains("synth") && j.at("synth").contains("seed")) c.synth.seed = synth_seed;

  for (auto& s : c.violations()) problems.push_back(s);
  if (!problems.empty()) {
    std::string msg;
    for (const auto& s : problems) msg += (msg.empty() ? "" : "; ") + s;
    throw ConfigError(msg);
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return parse_run_config(nlohmann::json::parse(in, nullptr, true, true));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

inline nlohmann::json run_config_json(const RunConfig& c) {
  nlohmann::json synth = c.synth;
  synth["test_trials_per_class"] = c.test_trials_per_class;
  return {{"paths", c.paths},     {"scheme", c.scheme}, {"seed", c.seed},
          {"threads", c.threads}, {"folds", c.folds},   {"literal_l1", c.literal_l1},
          {"synth", synth},       {"preprocess", c.preprocess}, {"train", c.train},
          {"arch", c.arch}};
}

/// "ovr", "ovo" or a path to a whitespace-separated coding-matrix file.
inline CodingMatrix resolve_scheme(const std::string& scheme, int k) {
  if (scheme == "ovr") return build_coding_matrix(Scheme::ovr, k);
  if (scheme == "ovo") return build_coding_matrix(Scheme::ovo, k);
  auto m = load_coding_matrix(scheme);
  if (static_cast<int>(m.classes()) != k)
    throw ConfigError("coding matrix " + scheme + " has " + std::to_string(m.classes()) + " rows for " +
                      std::to_string(k) + " classes");
  return m;
}

}  // namespace sbci
