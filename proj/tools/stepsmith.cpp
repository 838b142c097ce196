// Command-line front end: featurize, train, evaluate and generate.
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "stepsmith/error.hpp"
#include "stepsmith/pipeline.hpp"
#include "stepsmith/tempo.hpp"

namespace {

using namespace stepsmith;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
  std::vector<std::string> sets;
  std::optional<int> difficulty;
  std::optional<double> threshold;
  std::optional<double> temperature;
  std::string input;
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "key = value configuration file");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--dataset", o.dataset, "dataset root (simfiles and audio)");
  cmd->add_option("--set", o.sets, "extra key=value setting, may repeat");
}

// Defaults, then the config file, then --set, then dedicated flags.
PipelineConfig resolve(const Options& o) {
  PipelineConfig config = o.config_path.empty() ? PipelineConfig{} : load_config(o.config_path);
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError(fmt::format("--set expects key=value, got '{}'", kv));
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) config.set("seed", std::to_string(*o.seed));
  if (o.out) config.set("out_dir", *o.out);
  if (o.dataset) config.set("dataset_dir", *o.dataset);
  if (o.difficulty) config.set("difficulty", std::to_string(*o.difficulty));
  if (o.threshold) config.set("threshold", fmt::format("{:.17g}", *o.threshold));
  if (o.temperature) config.set("temperature", fmt::format("{:.17g}", *o.temperature));
  config.validate();
  return config;
}

void print_report(const TrainingReport& report) {
  if (report.epochs.empty()) return;
  const EpochRecord& best = report.epochs[report.best_epoch - 1];
  fmt::print("epochs {}  best {}  valid_loss {:.6f}  valid_metric {:.6f}{}\n", report.epochs.size(),
             report.best_epoch, best.valid_loss, best.valid_metric,
             report.early_stopped ? "  (early stop)" : "");
}

void print_metrics(const char* name, const MetricMap& m) {
  for (const auto& [metric, value] : m) {
    fmt::print("{:<10} {:<16} {}\n", name, metric, value ? fmt::format("{:.6f}", *value) : "n/a");
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Step chart learning and generation"};
  app.require_subcommand(1);
  Options o;

  auto* featurize = app.add_subcommand("featurize", "compute and cache log-mel features");
  auto* train_p = app.add_subcommand("train-placement", "train the step placement model");
  auto* train_s = app.add_subcommand("train-selection", "train the step selection model");
  auto* evaluate = app.add_subcommand("evaluate", "score both models on a dataset split");
  auto* generate = app.add_subcommand("generate", "write a five-chart simfile for a WAV file");
  auto* tempo = app.add_subcommand("tempo", "print bpm, offset and confidence for a WAV file");
  for (auto* cmd : {featurize, train_p, train_s, evaluate, generate}) add_common(cmd, o);
  generate->add_option("wav", o.input, "input audio")->required();
  generate->add_option("--difficulty", o.difficulty, "fine difficulty of the Challenge chart");
  generate->add_option("--threshold", o.threshold, "placement probability threshold");
  generate->add_option("--temperature", o.temperature, "selection sampling temperature");
  tempo->add_option("wav", o.input, "input audio")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::Usage);
  }

  if (tempo->parsed()) {
    const TempoEstimate t = estimate_tempo(load_wav(o.input));
    fmt::print("{:.4f} {:.4f} {:.4f}\n", t.bpm, t.offset_s, t.confidence);
    return 0;
  }
  const PipelineConfig config = resolve(o);
  if (featurize->parsed()) {
    const FeaturizeSummary s = cmd_featurize(config);
    fmt::print("songs {}  computed {}  cached {}\n", s.songs, s.computed, s.cached);
  } else if (train_p->parsed()) {
    print_report(cmd_train_placement(config));
  } else if (train_s->parsed()) {
    print_report(cmd_train_selection(config));
  } else if (evaluate->parsed()) {
    const EvaluationSummary s = cmd_evaluate(config);
    print_metrics("placement", s.placement_pooled);
    print_metrics("selection", s.selection_pooled);
  } else if (generate->parsed()) {
    const GenerateResult r = cmd_generate(config, o.input);
    fmt::print("{}  bpm {:.3f}  offset {:.4f}\n", r.path, r.tempo.bpm, r.tempo.offset_s);
    for (const Chart& c : r.sim.charts) {
      fmt::print("  {:<9} {:>3}  {} rows\n", to_string(c.coarse), c.fine, c.rows.size());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const stepsmith::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return static_cast<int>(stepsmith::ExitCode::Data);
  }
}
