#include <algorithm>
#include <atomic>
#include <filesystem>
#include <future>
#include <thread>

#include <fmt/format.h>

#include "stepsmith/beatgrid.hpp"
#include "stepsmith/error.hpp"
#include "stepsmith/generation.hpp"
#include "stepsmith/neural/checkpoint.hpp"
#include "stepsmith/pipeline.hpp"

namespace stepsmith {

namespace fs = std::filesystem;

namespace {

void warn(const std::string& message) { fmt::print(stderr, "warning: {}\n", message); }

void write_text(const fs::path& path, const std::string& text) {
  const std::vector<unsigned char> bytes(text.begin(), text.end());
  nn::write_file_bytes(path.string(), bytes);
}

fs::path ensure_out_dir(const PipelineConfig& config) {
  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw DataError(fmt::format("cannot create '{}': {}", config.out_dir, ec.message()));
  return fs::path(config.out_dir);
}

std::string chart_id(const Song& song, const Chart& chart) {
  return fmt::format("{}:{}:{}", song.id, to_string(chart.coarse), chart.fine);
}

struct Partition {
  std::vector<const Song*> train, valid, test;
};

Partition partition(const std::vector<Song>& songs, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const Song& s : songs) ids.push_back(s.id);
  const SplitAssignment split = split_dataset(ids, seed);
  Partition p;
  for (const Song& s : songs) {
    switch (split.at(s.id)) {
      case Split::Train: p.train.push_back(&s); break;
      case Split::Valid: p.valid.push_back(&s); break;
      case Split::Test: p.test.push_back(&s); break;
    }
  }
  return p;
}

std::vector<const Song*> eval_songs(const Partition& p, const std::string& which) {
  if (which == "train") return p.train;
  if (which == "valid") return p.valid;
  if (which == "test") return p.test;
  std::vector<const Song*> all = p.train;
  all.insert(all.end(), p.valid.begin(), p.valid.end());
  all.insert(all.end(), p.test.begin(), p.test.end());
  return all;
}

NormalizationStats fit_on(const std::vector<const Song*>& songs) {
  std::vector<MelSpectrogram> specs;
  specs.reserve(songs.size());
  for (const Song* s : songs) specs.push_back(s->features);
  return round_to_float(fit_normalization(specs));
}

std::size_t song_beats(const Song& song, const BeatClock& clock) {
  return clock.beats_before(song.duration_s);
}

struct PlacementSplit {
  PlacementDataset data;
  std::vector<CoarseDifficulty> coarse;
};

PlacementSplit build_placement(const std::vector<const Song*>& songs,
                               const NormalizationStats& stats, const PlacementConfig& cfg) {
  PlacementSplit out{PlacementDataset(cfg.context), {}};
  for (const Song* song : songs) {
    const BeatClock clock = BeatClock::from_simfile(song->sim);
    const std::size_t n = song_beats(*song, clock);
    if (n == 0) {
      warn(fmt::format("{}: no beats inside the audio, skipped", song->id));
      continue;
    }
    auto frames = std::make_shared<const BeatFrames>(sample_beat_frames(
        apply_normalization(song->features, stats), clock, n, static_cast<int>(cfg.samples)));
    const std::size_t handle = out.data.add_song(frames);
    for (const Chart& chart : song->sim.charts) {
      std::size_t dropped = 0;
      std::vector<PlacementVector> targets;
      try {
        targets = placement_targets(chart, n, &dropped);
      } catch (const DataError& e) {
        warn(fmt::format("{}: {}, chart skipped", chart_id(*song, chart), e.what()));
        continue;
      }
      if (dropped) {
        warn(fmt::format("{}: {} rows after the end of the audio ignored", chart_id(*song, chart),
                         dropped));
      }
      out.data.add_chart(handle, std::move(targets), chart.fine, chart_id(*song, chart));
      out.coarse.push_back(chart.coarse);
    }
  }
  return out;
}

struct SelectionSplit {
  SelectionDataset data;
  std::vector<int> fine;
  std::vector<CoarseDifficulty> coarse;
};

SelectionSplit build_selection(const std::vector<const Song*>& songs,
                               const NormalizationStats& stats, const SelectionConfig& cfg,
                               bool augment) {
  SelectionSplit out{SelectionDataset(cfg.geometry()), {}, {}};
  for (const Song* song : songs) {
    auto spec = std::make_shared<const MelSpectrogram>(apply_normalization(song->features, stats));
    const std::size_t handle = out.data.add_song(spec, BeatClock::from_simfile(song->sim));
    const std::vector<Chart> charts = augment ? augment_dataset(song->sim.charts) : song->sim.charts;
    for (std::size_t k = 0; k < charts.size(); ++k) {
      const Chart& chart = charts[k];
      std::string id = chart_id(*song, chart);
      if (augment && k % 4 != 0) id += fmt::format(":mirror{}", k % 4);
      out.data.add_chart(handle, chart, std::move(id));
      out.fine.push_back(chart.fine);
      out.coarse.push_back(chart.coarse);
    }
  }
  return out;
}

void require_examples(std::size_t n, const char* what) {
  if (n == 0) throw DataError(fmt::format("the training split has no {} examples", what));
}

template <class Bundle>
void check_bundle_config(const Bundle& bundle, const decltype(Bundle::config)& expected,
                         const std::string& path) {
  if (!(bundle.config == expected)) {
    throw DataError(fmt::format("{} was trained with a different model configuration", path));
  }
}

struct LoadedModels {
  PlacementBundle placement_bundle;
  SelectionBundle selection_bundle;
  std::unique_ptr<PlacementModel<float>> placement;
  std::unique_ptr<SelectionModel<float>> selection;
};

LoadedModels load_models(const PipelineConfig& config) {
  LoadedModels m;
  const std::string ppath = config.placement_path();
  const std::string spath = config.selection_path();
  m.placement_bundle = placement_bundle_from(nn::load_weights(ppath));
  m.selection_bundle = selection_bundle_from(nn::load_weights(spath));
  check_bundle_config(m.placement_bundle, config.placement, ppath);
  check_bundle_config(m.selection_bundle, config.selection, spath);
  m.placement = std::make_unique<PlacementModel<float>>(m.placement_bundle.config);
  m.placement->params().restore(m.placement_bundle.weights);
  m.selection = std::make_unique<SelectionModel<float>>(m.selection_bundle.config);
  m.selection->params().restore(m.selection_bundle.weights);
  return m;
}

}  // namespace

std::vector<std::string> find_simfiles(const std::string& dataset_dir) {
  if (!fs::is_directory(dataset_dir)) {
    throw DataError(fmt::format("dataset directory '{}' does not exist", dataset_dir));
  }
  std::vector<std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dataset_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".sm") {
      out.push_back(entry.path().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Song> load_songs(const PipelineConfig& config, FeatureCache& cache) {
  std::vector<Song> songs;
  std::vector<std::string> audio_paths;
  for (const std::string& path : find_simfiles(config.dataset_dir)) {
    ParseDiagnostics diag;
    Song song;
    song.sim = load_simfile(path, &diag);
    for (const std::string& w : diag.warnings) warn(fmt::format("{}: {}", path, w));
    song.id = fs::relative(fs::path(path), config.dataset_dir).replace_extension().generic_string();
    if (song.sim.music_path.empty()) {
      throw DataError(fmt::format("{}: simfile names no audio file", path));
    }
    const fs::path audio = fs::path(path).parent_path() / song.sim.music_path;
    if (!fs::is_regular_file(audio)) {
      throw DataError(fmt::format("{}: referenced audio '{}' is missing", path, audio.string()));
    }
    audio_paths.push_back(audio.string());
    songs.push_back(std::move(song));
  }
  if (songs.empty()) throw DataError(fmt::format("no simfiles found under '{}'", config.dataset_dir));

  std::atomic<std::size_t> next = 0;
  auto worker = [&] {
    for (std::size_t i = next++; i < songs.size(); i = next++) {
      songs[i].features = cache.load_or_compute(audio_paths[i], config.bands);
      songs[i].duration_s = static_cast<double>(songs[i].features.frames) * songs[i].features.hop_s;
    }
  };
  const std::size_t n_workers =
      std::min<std::size_t>(songs.size(), std::max(1U, std::thread::hardware_concurrency()));
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < n_workers; ++w) jobs.push_back(std::async(std::launch::async, worker));
  // get() rethrows the first failure after every worker has finished.
  for (auto& job : jobs) job.wait();
  for (auto& job : jobs) job.get();
  return songs;
}

FeaturizeSummary cmd_featurize(const PipelineConfig& config) {
  config.validate();
  FeatureCache cache(config.cache_dir);
  const auto songs = load_songs(config, cache);
  return {songs.size(), cache.misses(), cache.hits()};
}

TrainingReport cmd_train_placement(const PipelineConfig& config) {
  config.validate();
  FeatureCache cache(config.cache_dir);
  const auto songs = load_songs(config, cache);
  const Partition parts = partition(songs, config.seed);
  const NormalizationStats stats = fit_on(parts.train);
  const PlacementSplit train = build_placement(parts.train, stats, config.placement);
  const PlacementSplit valid = build_placement(parts.valid, stats, config.placement);
  require_examples(train.data.size(), "placement");
  PlacementModel<float> model(config.placement, config.seed);
  const TrainingReport report =
      train_placement(model, train.data, valid.data, config.placement_train);
  const fs::path out = ensure_out_dir(config);
  nn::save_weights(to_tensors(PlacementBundle{config.placement, stats, model.params().snapshot()}),
                   config.placement_path());
  write_text(out / "placement_curve.csv", report.csv("valid_prauc"));
  return report;
}

TrainingReport cmd_train_selection(const PipelineConfig& config) {
  config.validate();
  FeatureCache cache(config.cache_dir);
  const auto songs = load_songs(config, cache);
  const Partition parts = partition(songs, config.seed);
  const NormalizationStats stats = fit_on(parts.train);
  const SelectionSplit train = build_selection(parts.train, stats, config.selection, true);
  const SelectionSplit valid = build_selection(parts.valid, stats, config.selection, false);
  require_examples(train.data.size(), "selection");
  SelectionModel<float> model(config.selection, config.seed);
  const TrainingReport report =
      train_selection(model, train.data, valid.data, config.selection_train);
  const fs::path out = ensure_out_dir(config);
  nn::save_weights(to_tensors(SelectionBundle{config.selection, stats, model.params().snapshot()}),
                   config.selection_path());
  write_text(out / "selection_curve.csv", report.csv("valid_acc"));
  return report;
}

EvaluationSummary cmd_evaluate(const PipelineConfig& config) {
  config.validate();
  const LoadedModels models = load_models(config);
  FeatureCache cache(config.cache_dir);
  const auto songs = load_songs(config, cache);
  const auto chosen = eval_songs(partition(songs, config.seed), config.eval_split);
  EvaluationSummary summary;

  const PlacementSplit pdata =
      build_placement(chosen, models.placement_bundle.stats, models.placement_bundle.config);
  std::vector<double> all_p;
  std::vector<int> all_t;
  for (std::size_t c = 0; c < pdata.data.chart_count(); ++c) {
    const auto probs = placement_probabilities(*models.placement, pdata.data,
                                               pdata.data.chart_first(c), pdata.data.chart_size(c));
    const auto& targets = pdata.data.chart_targets(c);
    std::vector<double> p;
    std::vector<int> t;
    for (std::size_t b = 0; b < probs.size(); ++b) {
      for (std::size_t s = 0; s < kSlotsPerBeat; ++s) {
        p.push_back(probs[b][s]);
        t.push_back(targets[b].slots[s]);
      }
    }
    all_p.insert(all_p.end(), p.begin(), p.end());
    all_t.insert(all_t.end(), t.begin(), t.end());
    summary.placement.push_back({pdata.data.chart_id(c), pdata.data.chart_difficulty(c),
                                 pdata.coarse[c], metric_map(evaluate_placement(p, t))});
  }
  if (!all_p.empty()) summary.placement_pooled = metric_map(evaluate_placement(all_p, all_t));
  summary.placement_chart_mean = average_over_charts(summary.placement);

  const SelectionSplit sdata =
      build_selection(chosen, models.selection_bundle.stats, models.selection_bundle.config, false);
  std::vector<int> all_pred, all_target;
  std::vector<double> all_prob;
  {
    nn::NoGradGuard guard;
    Rng unused(0);
    for (std::size_t c = 0; c < sdata.data.chart_count(); ++c) {
      std::vector<int> pred, target;
      std::vector<double> prob;
      for (std::size_t k = 0; k < sdata.data.chart_size(c); ++k) {
        const SelectionExample ex = sdata.data.example(sdata.data.chart_first(c) + k);
        const auto dist = models.selection->forward(ex, false, unused);
        const auto& v = dist->value.storage();
        pred.push_back(static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
        target.push_back(ex.target);
        prob.push_back(v[static_cast<std::size_t>(ex.target)]);
      }
      all_pred.insert(all_pred.end(), pred.begin(), pred.end());
      all_target.insert(all_target.end(), target.begin(), target.end());
      all_prob.insert(all_prob.end(), prob.begin(), prob.end());
      if (target.empty()) continue;
      summary.selection.push_back({sdata.data.chart_id(c), sdata.fine[c], sdata.coarse[c],
                                   metric_map(selection_scores(pred, target, prob))});
    }
  }
  if (!all_target.empty()) {
    summary.selection_pooled = metric_map(selection_scores(all_pred, all_target, all_prob));
  }
  summary.selection_chart_mean = average_over_charts(summary.selection);

  const fs::path out = ensure_out_dir(config);
  write_text(out / "placement_metrics.csv", metrics_csv(summary.placement));
  write_text(out / "selection_metrics.csv", metrics_csv(summary.selection));
  const std::pair<DifficultyGrouping, const char*> groupings[] = {
      {DifficultyGrouping::Fine, "fine"}, {DifficultyGrouping::Coarse, "coarse"}};
  for (const auto& [grouping, name] : groupings) {
    write_text(out / fmt::format("placement_report_{}.csv", name),
               report_csv(difficulty_report(summary.placement, grouping)));
    write_text(out / fmt::format("selection_report_{}.csv", name),
               report_csv(difficulty_report(summary.selection, grouping)));
  }
  std::string text = "model,averaging,metric,value\n";
  const std::tuple<const char*, const char*, const MetricMap*> tables[] = {
      {"placement", "pooled", &summary.placement_pooled},
      {"placement", "chart_mean", &summary.placement_chart_mean},
      {"selection", "pooled", &summary.selection_pooled},
      {"selection", "chart_mean", &summary.selection_chart_mean}};
  for (const auto& [model, averaging, table] : tables) {
    for (const auto& [metric, value] : *table) {
      text += fmt::format("{},{},{},{}\n", model, averaging, metric,
                          value ? fmt::format("{:.17g}", *value) : std::string());
    }
  }
  write_text(out / "summary.csv", text);
  return summary;
}

GenerateResult cmd_generate(const PipelineConfig& config, const std::string& wav_path) {
  config.validate();
  const LoadedModels models = load_models(config);
  GenerateResult result;
  const AudioClip clip = load_wav(wav_path);
  result.tempo = estimate_tempo(clip);
  const BeatClock clock = BeatClock::from_tempo(result.tempo);
  const double duration = clip.duration_s();

  const NormalizationStats& pstats = models.placement_bundle.stats;
  const NormalizationStats& sstats = models.selection_bundle.stats;
  const MelSpectrogram raw = mel_spectrogram(clip, static_cast<int>(pstats.bands));
  const MelSpectrogram pspec = apply_normalization(raw, pstats);
  const MelSpectrogram sspec =
      sstats.bands == pstats.bands
          ? apply_normalization(raw, sstats)
          : apply_normalization(mel_spectrogram(clip, static_cast<int>(sstats.bands)), sstats);
  const std::size_t n_beats = clock.beats_before(duration);
  const BeatFrames frames = sample_beat_frames(
      pspec, clock, n_beats, static_cast<int>(models.placement_bundle.config.samples));

  const int d = config.difficulty > 0 ? config.difficulty
                                      : default_difficulty(result.tempo.bpm, duration / 60.0);
  result.plan = plan_difficulties(d, config.difficulties);

  const fs::path wav(wav_path);
  Simfile& sim = result.sim;
  sim.title = wav.stem().string();
  sim.music_path = wav.filename().string();
  sim.offset_s = result.tempo.offset_s;
  sim.bpm_segments = {BpmSegment{0.0, result.tempo.bpm}};
  auto make_chart = [&](CoarseDifficulty coarse, int fine) {
    std::vector<double> beats;
    for (const Placement& p : predict_placements(*models.placement, frames, fine, config.threshold)) {
      if (clock.time(p.beat()) <= duration) beats.push_back(p.beat());
    }
    Chart chart;
    chart.coarse = coarse;
    chart.fine = fine;
    if (!beats.empty()) {
      chart.rows = generate_steps(*models.selection, beats, sspec, clock,
                                  SamplingConfig{config.temperature, config.seed});
    }
    return chart;
  };
  std::vector<std::future<Chart>> jobs;
  for (const auto& [coarse, fine] : result.plan) {
    jobs.push_back(std::async(std::launch::async, make_chart, coarse, fine));
  }
  for (auto& job : jobs) job.wait();
  for (auto& job : jobs) {
    Chart chart = job.get();
    if (chart.rows.empty()) {
      result.warnings.push_back(
          fmt::format("{} ({}): no placements above threshold {}, chart left empty",
                      to_string(chart.coarse), chart.fine, config.threshold));
      warn(result.warnings.back());
    }
    sim.charts.push_back(std::move(chart));
  }
  validate_simfile(sim);
  const fs::path out = ensure_out_dir(config);
  result.path = (out / (sim.title + ".sm")).string();
  save_simfile(sim, result.path);
  return result;
}

}  // namespace stepsmith
