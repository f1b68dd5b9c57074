// sbci: synth | prep | train | eval | cv | kappa
//
// Every subcommand reads the same JSON config (--config) and accepts the
// same overrides; flags win over the file. Failures print one line
//   error code=<kind> message="<text>"
// on stderr and exit nonzero.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "sbci/data/archive.hpp"
#include "sbci/data/synth.hpp"
#include "sbci/ensemble_io.hpp"
#include "sbci/preprocess.hpp"
#include "sbci/report.hpp"
#include "sbci/run_config.hpp"

namespace {

using namespace sbci;
namespace fs = std::filesystem;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool zero_phase = false;
  std::optional<std::string> scheme;
  bool literal_l1 = false;
  std::optional<double> threshold;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> subsample;
  std::optional<std::string> in, out, checkpoint;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run config");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "worker threads (1 keeps runs bit-reproducible)");
  cmd->add_flag("--zero-phase", o.zero_phase, "forward-backward filtering");
  cmd->add_option("--scheme", o.scheme, "ovr, ovo or a coding-matrix file");
  cmd->add_flag("--literal-l1", o.literal_l1, "count don't-care entries when decoding");
  cmd->add_option("--threshold", o.threshold, "same/different distance threshold");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--pair-subsample", o.subsample, "pairs per epoch and column, 0 = all");
  cmd->add_option("--in", o.in, "input archive (overrides the config path)");
  cmd->add_option("--out", o.out, "output file (overrides the config path)");
  cmd->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  if (!o.config.empty()) c = load_run_config(o.config);
  if (o.seed) c.apply_seed(*o.seed);
  if (o.threads) c.threads = *o.threads;
  if (o.zero_phase) c.preprocess.zero_phase = true;
  if (o.scheme) c.scheme = *o.scheme;
  if (o.literal_l1) c.literal_l1 = true;
  if (o.threshold) c.train.threshold = *o.threshold;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.subsample) c.train.pair_subsample = *o.subsample;
  if (o.checkpoint) c.paths.checkpoint = *o.checkpoint;
  if (const auto v = c.violations(); !v.empty()) {
    std::string msg;
    for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
    throw ConfigError(msg);
  }
  return c;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " " + path + " does not exist");
}

void write_text(const std::string& path, const std::string& text) {
  io::write_file(path, io::Bytes(text.begin(), text.end()));
}

std::vector<CovarianceFeature> load_features(const std::string& path) {
  require_file(path, "feature archive");
  return data::to_features(data::load_archive(path));
}

int cmd_synth(const RunConfig& c, const Overrides& o) {
  auto [train, test] = data::synth_train_test(c.synth, c.test_trials_per_class);
  auto archive = [&](std::vector<EegTrial> trials) {
    data::TrialArchive a;
    a.channels = c.synth.channels;
    a.samples = c.synth.samples;
    a.fs = c.synth.fs;
    a.classes = c.synth.classes;
    a.trials = std::move(trials);
    return a;
  };
  const auto train_path = o.out.value_or(c.paths.raw);
  data::save_archive(train_path, archive(std::move(train)));
  std::cout << "wrote " << train_path << " trials=" << c.synth.trials_per_class * c.synth.bands.size() << '\n';
  if (!test.empty()) {
    data::save_archive(c.paths.test_raw, archive(std::move(test)));
    std::cout << "wrote " << c.paths.test_raw << " trials=" << c.test_trials_per_class * c.synth.bands.size()
              << '\n';
  }
  return 0;
}

void prep_one(const RunConfig& c, const std::string& in, const std::string& out) {
  require_file(in, "raw archive");
  const auto raw = data::load_archive(in);
  if (raw.kind != data::ArchiveKind::raw) throw FormatError(in + " already holds covariance features");
  if (const auto v = c.preprocess.violations(raw.fs); !v.empty()) throw ConfigError(v.front());
  const auto feats = preprocess(raw.trials, c.preprocess);
  data::save_archive(out, data::from_features(feats, raw.classes, raw.fs));
  std::cout << "wrote " << out << " trials=" << feats.size() << '\n';
}

int cmd_prep(const RunConfig& c, const Overrides& o) {
  if (o.in || o.out) {
    prep_one(c, o.in.value_or(c.paths.raw), o.out.value_or(c.paths.features));
    return 0;
  }
  prep_one(c, c.paths.raw, c.paths.features);
  if (fs::is_regular_file(c.paths.test_raw)) prep_one(c, c.paths.test_raw, c.paths.test_features);
  return 0;
}

int cmd_train(const RunConfig& c, const Overrides& o) {
  const auto path = o.in.value_or(c.paths.features);
  require_file(path, "feature archive");
  const auto archive = data::load_archive(path);
  const auto trials = data::to_features(archive);
  const auto m = resolve_scheme(c.scheme, archive.classes);
  std::vector<ColumnTraining> info;
  const auto e = train_ensemble(trials, m, c.train, c.arch, c.threads, &info);
  save_ensemble(c.paths.checkpoint, e, archive.fs, run_config_json(c));
  std::ostringstream log;
  for (std::size_t j = 0; j < info.size(); ++j) {
    std::istringstream lines(info[j].log);
    std::string line;
    char col[32];
    std::snprintf(col, sizeof col, "column=%02zu ", j + 1);
    while (std::getline(lines, line)) log << col << line << '\n';
    log << col << "tau=" << info[j].result.tau << '\n';
  }
  write_text((fs::path(c.paths.checkpoint) / "train.log").string(), log.str());
  std::cout << log.str() << "wrote " << c.paths.checkpoint << " models=" << e.classifiers.size() << '\n';
  return 0;
}

void print_summary(const EvalSummary& s) {
  std::printf("n=%zu accuracy=%.6f chance=%.6f kappa=%.6f\n", s.n, s.accuracy, s.chance, s.kappa);
  std::printf("confusion (rows true, columns predicted)\n");
  for (const auto& row : s.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) std::printf(j ? " %4zu" : "%4zu", row[j]);
    std::printf("\n");
  }
}

int cmd_eval(const RunConfig& c, const Overrides& o) {
  if (!fs::is_regular_file(fs::path(c.paths.checkpoint) / "manifest.json"))
    throw ConfigError("checkpoint " + c.paths.checkpoint + " has no manifest.json");
  const auto e = load_ensemble(c.paths.checkpoint);
  const auto test = load_features(o.in.value_or(c.paths.test_features));
  const auto records = classify_all(e, test, c.literal_l1);
  const auto out = o.out.value_or(c.paths.report);
  std::ostringstream report;
  const auto s = write_eval_report(report, test, records, e.matrix.classes());
  write_text(out, report.str());
  std::cout << "wrote " << out << " records=" << records.size() << '\n';
  if (s.n) print_summary(s);
  return 0;
}

int cmd_cv(const RunConfig& c, const Overrides& o) {
  const auto path = o.in.value_or(c.paths.features);
  require_file(path, "feature archive");
  const auto archive = data::load_archive(path);
  const auto trials = data::to_features(archive);
  const auto m = resolve_scheme(c.scheme, archive.classes);
  std::ostringstream log;
  const auto r = kfold_cv(trials, c.folds, m, c.train, c.arch, c.threads, c.literal_l1, &log);
  std::ostringstream report;
  for (std::size_t f = 0; f < r.folds.size(); ++f)
    report << nlohmann::json{{"fold", f + 1},
                             {"n", r.folds[f].n},
                             {"accuracy", r.folds[f].accuracy},
                             {"kappa", r.folds[f].kappa}}
                  .dump()
           << '\n';
  report << nlohmann::json{{"summary",
                            {{"folds", r.folds.size()},
                             {"mean_accuracy", r.mean_accuracy},
                             {"std_accuracy", r.std_accuracy},
                             {"mean_kappa", r.mean_kappa},
                             {"std_kappa", r.std_kappa},
                             {"pooled_accuracy", r.pooled_accuracy}}}}
                .dump()
         << '\n';
  const auto out = o.out.value_or(c.paths.report);
  write_text(out, report.str());
  std::cout << log.str();
  std::printf("mean_accuracy=%.6f std=%.6f mean_kappa=%.6f std=%.6f\n", r.mean_accuracy, r.std_accuracy,
              r.mean_kappa, r.std_kappa);
  std::cout << "wrote " << out << '\n';
  return 0;
}

int cmd_kappa(const RunConfig& c, const Overrides& o, std::optional<double> acc, std::optional<double> chance) {
  if (acc || chance) {
    if (!acc || !chance) throw ConfigError("kappa needs both --accuracy and --chance");
    std::printf("kappa=%.17g\n", kappa(*acc, *chance));
    return 0;
  }
  const auto path = o.in.value_or(c.paths.report);
  require_file(path, "report");
  std::ifstream in(path);
  print_summary(summarize_report(in));
  return 0;
}

int fail(const std::string& code, const std::string& message) {
  std::string m;
  for (char ch : message) {
    if (ch == '"' || ch == '\\') m += '\\';
    m += ch == '\n' ? ' ' : ch;
  }
  std::cerr << "error code=" << code << " message=\"" << m << "\"\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Layer buffers are tens of MB and reallocated every step; keep them on
  // the heap instead of fresh mmaps.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Twin-network EEG classification with binary decomposition"};
  app.require_subcommand(1);
  Overrides o;
  std::optional<double> acc, chance;
  const char* names[][2] = {{"synth", "generate synthetic raw train/test archives"},
                            {"prep", "band-pass, epoch and compute covariance features"},
                            {"train", "train one twin network per coding-matrix column"},
                            {"eval", "classify a feature archive and write a report"},
                            {"cv", "stratified k-fold cross-validation"},
                            {"kappa", "summarize a report, or kappa from --accuracy/--chance"}};
  std::vector<CLI::App*> cmds;
  for (auto& [name, help] : names) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, o);
    cmds.push_back(cmd);
  }
  cmds.back()->add_option("--accuracy", acc, "observed accuracy p_s");
  cmds.back()->add_option("--chance", chance, "chance level p_r");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what()) + 1;
  }

  try {
    const RunConfig c = resolve(o);
    if (cmds[0]->parsed()) return cmd_synth(c, o);
    if (cmds[1]->parsed()) return cmd_prep(c, o);
    if (cmds[2]->parsed()) return cmd_train(c, o);
    if (cmds[3]->parsed()) return cmd_eval(c, o);
    if (cmds[4]->parsed()) return cmd_cv(c, o);
    return cmd_kappa(c, o, acc, chance);
  } catch (const sbci::Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
