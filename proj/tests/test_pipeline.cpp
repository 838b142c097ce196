#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "stepsmith/error.hpp"
#include "stepsmith/generation.hpp"
#include "stepsmith/pipeline.hpp"
#include "support/synth.hpp"
#include "support/toy_dataset.hpp"

using namespace stepsmith;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("stepsmith_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STEPSMITH_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParseAndPrecedence) {
  const PipelineConfig c = parse_config(
      "# comment\n"
      "preset = toy\n"
      "seed = 3   # trailing comment\n"
      "threshold = 0.4\n"
      "threshold = 0.6\n"
      "placement.lstm_units = 12\n"
      "difficulties = 13, 11, 9, 7, 5\n");
  EXPECT_EQ(c.bands, 8u);
  EXPECT_EQ(c.placement.context, 2u);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.placement_train.seed, 3u);
  EXPECT_EQ(c.threshold, 0.6);
  EXPECT_EQ(c.placement.lstm_units, 12u);
  EXPECT_EQ(c.difficulties, (std::vector<int>{13, 11, 9, 7, 5}));
  EXPECT_EQ(c.selection_train.batch_size, 64u);
  EXPECT_EQ(c.placement_train.batch_size, 32u);
  c.validate();
  EXPECT_EQ(fs::path(c.placement_path()).filename(), "placement.ddcl");

  const PipelineConfig layered = parse_config("threshold = 0.2\n", c);
  EXPECT_EQ(layered.threshold, 0.2);
  EXPECT_EQ(layered.seed, 3u);
}

TEST(Config, Errors) {
  try {
    parse_config("seed = 1\nnot_a_key = 3\n");
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("seed = banana\n"), UsageError);
  EXPECT_THROW(parse_config("just words\n"), UsageError);
  EXPECT_THROW(parse_config("preset = huge\n"), UsageError);
  EXPECT_THROW(parse_config("threshold = 1.5\n").validate(), UsageError);
  EXPECT_THROW(parse_config("difficulties = 1,2,3\n").validate(), UsageError);
  EXPECT_THROW(parse_config("placement.dense_dropout = 1.0\n").validate(), UsageError);
  EXPECT_THROW(parse_config("difficulty = 4\n").validate(), UsageError);
  EXPECT_THROW(load_config("/nonexistent/stepsmith.conf"), Error);
}

TEST(Difficulty, Formula) {
  EXPECT_EQ(default_difficulty(120.0, 2.0), 9);
  EXPECT_EQ(default_difficulty(120.0, 16.0), 12);
  EXPECT_EQ(default_difficulty(40.0, 1.0), 5);
  EXPECT_THROW(default_difficulty(0.0, 1.0), DataError);
}

TEST(Difficulty, Plan) {
  const DifficultyPlan p = plan_difficulties(11);
  const DifficultyPlan want = {{CoarseDifficulty::Challenge, 11}, {CoarseDifficulty::Hard, 10},
                               {CoarseDifficulty::Medium, 9},     {CoarseDifficulty::Easy, 8},
                               {CoarseDifficulty::Beginner, 7}};
  EXPECT_EQ(p, want);
  EXPECT_EQ(plan_difficulties(5).back().second, 1);
  const DifficultyPlan o = plan_difficulties(5, {13, 11, 9, 7, 5});
  EXPECT_EQ(o[0].second, 13);
  EXPECT_EQ(o[4], (std::pair{CoarseDifficulty::Beginner, 5}));
  EXPECT_THROW(plan_difficulties(9, {1, 2, 3, 4}), UsageError);
  EXPECT_THROW(plan_difficulties(4), UsageError);
  for (int d = 5; d < 40; ++d) {
    const DifficultyPlan q = plan_difficulties(d);
    ASSERT_EQ(q.size(), 5u);
    for (std::size_t i = 1; i < 5; ++i) EXPECT_EQ(q[i - 1].second - q[i].second, 1);
  }
}

TEST(FeatureCache, Sha256KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(std::span(reinterpret_cast<const unsigned char*>(abc.data()), abc.size())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(FeatureCache, EncodeDecode) {
  const MelSpectrogram spec = mel_spectrogram(fixture::click_track(120.0, 0.0, 1.0), 8);
  const std::string hash(64, 'a');
  const auto bytes = encode_features(spec, hash);
  const auto back = decode_features(bytes, hash);
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->data, spec.data);
  EXPECT_EQ(back->bands, 8u);
  EXPECT_FALSE(decode_features(bytes, std::string(64, 'b')).has_value());
  auto bad = bytes;
  bad[bad.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_features(bad, hash), DataError);
  bad = bytes;
  bad.resize(30);
  EXPECT_THROW(decode_features(bad, hash), DataError);
}

TEST(FeatureCache, IdempotentAndNeverStale) {
  const fs::path dir = scratch("cache");
  const std::string wav = (dir / "a.wav").string();
  nn::write_file_bytes(wav, encode_wav(fixture::click_track(120.0, 0.0, 2.0), WavFormat::Pcm16));
  FeatureCache cache((dir / "c").string());
  const MelSpectrogram first = cache.load_or_compute(wav, 8);
  const MelSpectrogram second = cache.load_or_compute(wav, 8);
  EXPECT_EQ(cache.misses(), 1u);
  EXPECT_EQ(cache.hits(), 1u);
  EXPECT_EQ(first.data, second.data);
  cache.load_or_compute(wav, 10);
  EXPECT_EQ(cache.misses(), 2u);

  // New content under the same path is a different key.
  nn::write_file_bytes(wav, encode_wav(fixture::click_track(90.0, 0.0, 2.0), WavFormat::Pcm16));
  const MelSpectrogram changed = cache.load_or_compute(wav, 8);
  EXPECT_EQ(cache.misses(), 3u);
  EXPECT_NE(changed.data, first.data);

  // A corrupt entry is recomputed, not served.
  const auto hash = sha256_hex(nn::read_file_bytes(wav));
  const std::string entry = cache.entry_path(hash, 8);
  auto bytes = nn::read_file_bytes(entry);
  bytes[100] ^= 0xFF;
  nn::write_file_bytes(entry, bytes);
  const MelSpectrogram again = cache.load_or_compute(wav, 8);
  EXPECT_EQ(cache.misses(), 4u);
  EXPECT_EQ(again.data, changed.data);
  fs::remove_all(dir);
}

TEST(Dataset, MissingAudioIsDataError) {
  const fs::path dir = scratch("missing_audio");
  fixture::write_toy_dataset(dir / "data", 3, 3.0);
  fs::remove(dir / "data" / "song1" / "song1.wav");
  const PipelineConfig c = fixture::toy_pipeline_config(dir);
  EXPECT_THROW(cmd_featurize(c), DataError);
  PipelineConfig empty = c;
  empty.dataset_dir = (dir / "nothing").string();
  EXPECT_THROW(cmd_featurize(empty), DataError);
  fs::remove_all(dir);
}

class ToyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    work_ = new fs::path(scratch("pipeline"));
    fixture::write_toy_dataset(*work_ / "data");
    config_ = new PipelineConfig(fixture::toy_pipeline_config(*work_));
    nn::write_file_bytes((*work_ / "click.wav").string(),
                         encode_wav(fixture::click_track(120.0, 0.25, 30.0), WavFormat::Pcm16));
    first_featurize_ = new FeaturizeSummary(cmd_featurize(*config_));
    placement_report_ = new TrainingReport(cmd_train_placement(*config_));
    cmd_train_selection(*config_);
  }

  static void TearDownTestSuite() {
    fs::remove_all(*work_);
    delete work_;
    delete config_;
    delete first_featurize_;
    delete placement_report_;
  }

  static fs::path* work_;
  static PipelineConfig* config_;
  static FeaturizeSummary* first_featurize_;
  static TrainingReport* placement_report_;
};

fs::path* ToyPipeline::work_ = nullptr;
PipelineConfig* ToyPipeline::config_ = nullptr;
FeaturizeSummary* ToyPipeline::first_featurize_ = nullptr;
TrainingReport* ToyPipeline::placement_report_ = nullptr;

TEST_F(ToyPipeline, FeaturizeIsIdempotent) {
  EXPECT_EQ(first_featurize_->songs, 8u);
  EXPECT_EQ(first_featurize_->computed, 8u);
  const FeaturizeSummary again = cmd_featurize(*config_);
  EXPECT_EQ(again.computed, 0u);
  EXPECT_EQ(again.cached, 8u);
}

TEST_F(ToyPipeline, TrainingIsDeterministic) {
  const fs::path out = *work_ / "out";
  const auto weights = nn::read_file_bytes(config_->placement_path());
  const std::string curve = slurp(out / "placement_curve.csv");
  EXPECT_EQ(curve, placement_report_->csv("valid_prauc"));
  PipelineConfig again = *config_;
  again.out_dir = (*work_ / "again").string();
  cmd_train_placement(again);
  EXPECT_EQ(nn::read_file_bytes(again.placement_path()), weights);
  EXPECT_EQ(slurp(*work_ / "again" / "placement_curve.csv"), curve);
  EXPECT_TRUE(fs::exists(out / "selection_curve.csv"));
}

TEST_F(ToyPipeline, EvaluateWritesReportsAndFitsToyData) {
  const EvaluationSummary s = cmd_evaluate(*config_);
  EXPECT_EQ(s.placement.size(), 8u);
  EXPECT_EQ(s.selection.size(), 8u);
  ASSERT_TRUE(s.placement_chart_mean.at("f1").has_value());
  EXPECT_GT(*s.placement_chart_mean.at("f1"), 0.95);
  for (const char* f : {"placement_metrics.csv", "selection_metrics.csv", "placement_report_fine.csv",
                        "placement_report_coarse.csv", "selection_report_fine.csv",
                        "selection_report_coarse.csv", "summary.csv"}) {
    EXPECT_TRUE(fs::exists(*work_ / "out" / f)) << f;
  }
  const std::string report = slurp(*work_ / "out" / "placement_report_coarse.csv");
  EXPECT_NE(report.find("f1,Easy,"), std::string::npos);
  EXPECT_NE(report.find("f1,Hard,"), std::string::npos);
}

TEST_F(ToyPipeline, DenserLabelsForHarderInput) {
  FeatureCache cache(config_->cache_dir);
  const auto songs = load_songs(*config_, cache);
  const auto bundle = placement_bundle_from(nn::load_weights(config_->placement_path()));
  PlacementModel<float> model(bundle.config);
  model.params().restore(bundle.weights);
  for (const Song& song : songs) {
    const BeatClock clock = BeatClock::from_simfile(song.sim);
    const MelSpectrogram spec = apply_normalization(song.features, bundle.stats);
    const BeatFrames frames = sample_beat_frames(spec, clock, clock.beats_before(song.duration_s),
                                                 static_cast<int>(bundle.config.samples));
    EXPECT_GE(predict_placements(model, frames, 8).size(), predict_placements(model, frames, 3).size())
        << song.id;
  }
}

TEST_F(ToyPipeline, GenerateEmitsValidFiveChartSimfile) {
  PipelineConfig c = *config_;
  c.temperature = 0.0;
  const std::string wav = (*work_ / "click.wav").string();
  const GenerateResult r = cmd_generate(c, wav);
  EXPECT_NEAR(r.tempo.bpm, 120.0, 0.05);
  const int d = default_difficulty(r.tempo.bpm, 0.5);
  ASSERT_EQ(r.plan, plan_difficulties(d));
  const Simfile sim = load_simfile(r.path);
  EXPECT_EQ(sim, r.sim);
  ASSERT_EQ(sim.charts.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(sim.charts[i].coarse, r.plan[i].first);
    EXPECT_EQ(sim.charts[i].fine, d - static_cast<int>(i));
    validate_chart(sim.charts[i]);
    for (const Row& row : sim.charts[i].rows) {
      const double t = beat_to_time(sim, row.beat);
      EXPECT_GE(t, 0.0);
      EXPECT_LE(t, 30.0);
    }
  }
  EXPECT_EQ(sim.bpm_segments.size(), 1u);
  EXPECT_EQ(sim.music_path, "click.wav");
  const std::string bytes = slurp(r.path);
  cmd_generate(c, wav);
  EXPECT_EQ(slurp(r.path), bytes);

  c.difficulties = {13, 11, 9, 7, 5};
  const GenerateResult o = cmd_generate(c, wav);
  EXPECT_EQ(o.sim.charts[1].fine, 11);
  EXPECT_EQ(o.sim.charts[4].fine, 5);
}

TEST_F(ToyPipeline, EmptyPlacementsLeaveEmptyCharts) {
  PipelineConfig c = *config_;
  c.threshold = 1.0;
  c.out_dir = (*work_ / "strict").string();
  c.placement_checkpoint = config_->placement_path();
  c.selection_checkpoint = config_->selection_path();
  const GenerateResult r = cmd_generate(c, (*work_ / "click.wav").string());
  EXPECT_EQ(r.warnings.size(), 5u);
  const Simfile sim = load_simfile(r.path);
  ASSERT_EQ(sim.charts.size(), 5u);
  for (const Chart& chart : sim.charts) EXPECT_TRUE(chart.rows.empty());
}

TEST_F(ToyPipeline, CheckpointMismatchIsDataError) {
  PipelineConfig c = *config_;
  c.placement.lstm_units = 20;
  EXPECT_THROW(cmd_evaluate(c), DataError);
  PipelineConfig missing = *config_;
  missing.placement_checkpoint = (*work_ / "nope.ddcl").string();
  EXPECT_THROW(cmd_generate(missing, (*work_ / "click.wav").string()), DataError);
}

TEST_F(ToyPipeline, CliExitCodes) {
  const std::string common = fmt::format("--set preset=toy --dataset {} --out {} --set cache_dir={}",
                                         config_->dataset_dir, config_->out_dir, config_->cache_dir);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("bogus"), 1);
  EXPECT_EQ(run_cli("featurize --set nope=1"), 1);
  EXPECT_EQ(run_cli("featurize " + common), 0);
  EXPECT_EQ(run_cli("generate /nonexistent.wav " + common), 2);
  const fs::path quiet = *work_ / "quiet.wav";
  nn::write_file_bytes(quiet.string(), encode_wav(fixture::silence(10.0), WavFormat::Pcm16));
  EXPECT_EQ(run_cli("tempo " + quiet.string()), 3);
  EXPECT_EQ(run_cli("tempo " + (*work_ / "click.wav").string()), 0);
}
