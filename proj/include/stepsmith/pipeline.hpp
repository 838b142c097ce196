#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stepsmith/audiofeat.hpp"
#include "stepsmith/evalmetrics.hpp"
#include "stepsmith/models.hpp"
#include "stepsmith/simfile.hpp"
#include "stepsmith/tempo.hpp"
#include "stepsmith/training.hpp"

namespace stepsmith {

// ---- configuration ----

struct PipelineConfig {
  std::string dataset_dir = "data";
  std::string cache_dir = "cache";
  std::string out_dir = "out";
  std::string placement_checkpoint;  // default: <out_dir>/placement.ddcl
  std::string selection_checkpoint;  // default: <out_dir>/selection.ddcl
  std::uint64_t seed = 0;
  std::size_t bands = kDefaultMelBands;

  PlacementConfig placement;
  SelectionConfig selection;
  TrainConfig placement_train;
  TrainConfig selection_train;

  std::string eval_split = "test";  // train, valid, test or all
  double threshold = 0.5;
  double temperature = 1.0;
  int difficulty = 0;  // 0: derive from tempo and length
  std::vector<int> difficulties;  // optional five explicit fine values

  PipelineConfig();

  // Applies one `key = value` setting. Throws UsageError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  void validate() const;

  std::string placement_path() const;
  std::string selection_path() const;
};

// Flat `key = value` lines; '#' starts a comment. Settings apply in file order on top
// of `base`.
PipelineConfig parse_config(std::string_view text, PipelineConfig base = {});
PipelineConfig load_config(const std::string& path, PipelineConfig base = {});

// ---- difficulty ----

// round(floor(bpm/10) - (4 - log2(minutes))), never below 5.
int default_difficulty(double bpm, double length_minutes);

using DifficultyPlan = std::vector<std::pair<CoarseDifficulty, int>>;

// Challenge..Beginner at d..d-4, or the five override values in that order.
DifficultyPlan plan_difficulties(int d, const std::vector<int>& overrides = {});

// ---- feature cache ----

// Log-mel features keyed by the SHA-256 of the audio file bytes and the band count.
// load_or_compute may be called concurrently for different files.
class FeatureCache {
 public:
  explicit FeatureCache(std::string dir);

  MelSpectrogram load_or_compute(const std::string& wav_path, std::size_t bands);

  std::size_t hits() const { return hits_; }
  std::size_t misses() const { return misses_; }
  std::string entry_path(const std::string& content_hash, std::size_t bands) const;

 private:
  std::string dir_;
  std::atomic<std::size_t> hits_ = 0;
  std::atomic<std::size_t> misses_ = 0;
};

std::string sha256_hex(std::span<const unsigned char> bytes);

std::vector<unsigned char> encode_features(const MelSpectrogram& spec, const std::string& content_hash);
// Throws DataError on corruption; returns nullopt when the entry belongs to other content.
std::optional<MelSpectrogram> decode_features(std::span<const unsigned char> bytes,
                                              const std::string& expected_hash);

// ---- dataset ----

struct Song {
  std::string id;  // simfile path relative to the dataset root, without extension
  Simfile sim;
  MelSpectrogram features;  // un-normalized log-mel
  double duration_s = 0.0;
};

std::vector<std::string> find_simfiles(const std::string& dataset_dir);
std::vector<Song> load_songs(const PipelineConfig& config, FeatureCache& cache);

// ---- commands ----

struct FeaturizeSummary {
  std::size_t songs = 0;
  std::size_t computed = 0;
  std::size_t cached = 0;
};

FeaturizeSummary cmd_featurize(const PipelineConfig& config);
TrainingReport cmd_train_placement(const PipelineConfig& config);
TrainingReport cmd_train_selection(const PipelineConfig& config);

struct EvaluationSummary {
  std::vector<ChartMetrics> placement;
  std::vector<ChartMetrics> selection;
  MetricMap placement_pooled;
  MetricMap placement_chart_mean;
  MetricMap selection_pooled;
  MetricMap selection_chart_mean;
};

EvaluationSummary cmd_evaluate(const PipelineConfig& config);

struct GenerateResult {
  std::string path;
  Simfile sim;
  TempoEstimate tempo;
  DifficultyPlan plan;
  std::vector<std::string> warnings;
};

GenerateResult cmd_generate(const PipelineConfig& config, const std::string& wav_path);

}  // namespace stepsmith
