#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "stepsmith/beatgrid.hpp"
#include "stepsmith/error.hpp"
#include "support/fixtures.hpp"

using namespace stepsmith;

namespace {

// Spectrogram whose every value in frame f is f + 1, so zero means padding.
MelSpectrogram ramp_spec(std::size_t frames, std::size_t bands = 4) {
  MelSpectrogram m;
  m.frames = frames;
  m.bands = bands;
  m.data.resize(frames * bands * kStftChannels);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t k = 0; k < bands * kStftChannels; ++k) {
      m.data[f * bands * kStftChannels + k] = static_cast<float>(f + 1);
    }
  }
  return m;
}

long nearest_frame(double t) { return static_cast<long>(std::floor(t / 0.01 + 0.5)); }

Chart chart_at(const std::vector<double>& beats) {
  Chart c;
  for (double b : beats) c.rows.push_back({b, StepSymbol::from_string("1000")});
  return c;
}

}  // namespace

TEST(BeatFrames, NearestFrameAt120) {
  const BeatClock clock = BeatClock::constant(120.0, 0.0);
  const auto idx = beat_frame_indices(clock, 0, 1000, kHopSeconds);
  ASSERT_EQ(idx.size(), 32u);
  const std::vector<long> head = {0, 2, 3, 5, 6, 8};
  for (std::size_t k = 0; k < head.size(); ++k) EXPECT_EQ(idx[k], head[k]);
  for (std::size_t k = 0; k < 32; ++k) {
    EXPECT_EQ(idx[k], nearest_frame(0.5 * static_cast<double>(k) / 32.0));
    if (k) {
      EXPECT_GE(idx[k], idx[k - 1]);
    }
  }
}

TEST(BeatFrames, DuplicatesAt240) {
  const BeatClock clock = BeatClock::constant(240.0, 0.0);
  for (std::size_t b = 0; b < 8; ++b) {
    const auto idx = beat_frame_indices(clock, b, 1000, kHopSeconds);
    const std::set<long> distinct(idx.begin(), idx.end());
    EXPECT_LE(distinct.size(), 26u);
    EXPECT_LT(distinct.size(), idx.size());
  }
}

TEST(BeatFrames, PastEndIsZero) {
  const MelSpectrogram spec = ramp_spec(150);
  TempoEstimate tempo{120.0, 0.0, 1.0};
  const auto frames = beat_frames(spec, tempo, 4, 3);
  ASSERT_EQ(frames.size(), 4u);
  for (float v : frames[3].data) EXPECT_EQ(v, 0.0f);
  EXPECT_GT(frames[0].data[0], 0.0f);
  EXPECT_EQ(frames[2].beat_index, 2);
  EXPECT_EQ(frames[2].difficulty, 3);
  EXPECT_EQ(frames[2].bpm, 120.0);
  // Sample k of beat 1 is frame nearest 0.5 + k/64 s.
  for (std::size_t k = 0; k < 32; ++k) {
    const float want = static_cast<float>(nearest_frame(0.5 + 0.5 * static_cast<double>(k) / 32.0) + 1);
    EXPECT_EQ(frames[1].data[k * 4 * 3], want) << k;
  }
}

TEST(BeatFrames, TempoRangeChecked) {
  const MelSpectrogram spec = ramp_spec(100);
  EXPECT_THROW(beat_frames(spec, {59.0, 0.0, 1.0}, 2, 1), DataError);
  EXPECT_THROW(beat_frames(spec, {241.0, 0.0, 1.0}, 2, 1), DataError);
  EXPECT_NO_THROW(beat_frames(spec, {240.0, 0.0, 1.0}, 2, 1));
}

TEST(PlacementTargets, Examples) {
  auto t = placement_targets(chart_at({0.0, 0.5}), 2);
  ASSERT_EQ(t.size(), 2u);
  for (std::size_t k = 0; k < 48; ++k) EXPECT_EQ(t[0].slots[k], (k == 0 || k == 24) ? 1 : 0);
  for (auto s : t[1].slots) EXPECT_EQ(s, 0);

  t = placement_targets(chart_at({2.25, 2.75}), 3);
  std::string quarter;
  for (std::size_t q = 0; q < 4; ++q) quarter += static_cast<char>('0' + t[2].slots[12 * q]);
  EXPECT_EQ(quarter, "0101");
  EXPECT_EQ(t[2].slots[12], 1);
  EXPECT_EQ(t[2].slots[36], 1);

  t = placement_targets(Chart{}, 5);
  ASSERT_EQ(t.size(), 5u);
  for (const auto& v : t) {
    for (auto s : v.slots) EXPECT_EQ(s, 0);
  }
}

TEST(PlacementTargets, SnapsCollidesAndDrops) {
  auto t = placement_targets(chart_at({1.0 + 1.0 / 100.0}), 2);
  EXPECT_EQ(t[1].slots[0], 1);
  EXPECT_THROW(placement_targets(chart_at({0.0, 0.005}), 2), DataError);
  std::size_t dropped = 0;
  t = placement_targets(chart_at({0.0, 3.0, 7.5}), 3, &dropped);
  EXPECT_EQ(dropped, 2u);
  EXPECT_EQ(t.size(), 3u);
}

TEST(PlacementTargets, RoundTripOnGrid) {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const Chart c = fixture::random_chart(rng, 60);
    const std::size_t n = c.rows.empty() ? 1 : static_cast<std::size_t>(c.rows.back().beat) + 1;
    const auto beats = placement_beats(placement_targets(c, n));
    ASSERT_EQ(beats.size(), c.rows.size());
    for (std::size_t r = 0; r < beats.size(); ++r) EXPECT_EQ(beats[r], c.rows[r].beat);
  }
}

TEST(PlacementExamples, Context) {
  const BeatClock clock = BeatClock::constant(120.0, 0.0);
  const MelSpectrogram spec = ramp_spec(6000, 2);
  const BeatFrames one = sample_beat_frames(spec, clock, 1, 4);
  const auto ex1 = make_placement_example(one, nullptr, 0, 4);
  const std::size_t stride = one.beat_stride();
  for (std::size_t t = 0; t < 15; ++t) {
    for (std::size_t k = 0; k < stride; ++k) EXPECT_EQ(ex1.past[t * stride + k], 0.0f);
  }
  EXPECT_TRUE(std::equal(one.beat(0), one.beat(0) + stride, ex1.past.begin() + 15 * stride));
  EXPECT_TRUE(std::equal(one.beat(0), one.beat(0) + stride, ex1.future.begin()));
  for (std::size_t t = 0; t < 16; ++t) {
    EXPECT_EQ(ex1.past_aux[2 * t], 120.0f);
    EXPECT_EQ(ex1.past_aux[2 * t + 1], 4.0f);
    EXPECT_EQ(ex1.future_aux[2 * t], 120.0f);
    EXPECT_EQ(ex1.future_aux[2 * t + 1], 4.0f);
  }

  const BeatFrames song = sample_beat_frames(spec, clock, 100, 4);
  const auto ex = make_placement_example(song, nullptr, 20, 4);
  for (std::size_t t = 0; t < 16; ++t) {
    EXPECT_TRUE(std::equal(song.beat(5 + t), song.beat(5 + t) + stride, ex.past.begin() + static_cast<long>(t * stride)));
    EXPECT_TRUE(std::equal(song.beat(20 + t), song.beat(20 + t) + stride, ex.future.begin() + static_cast<long>(t * stride)));
  }
}

TEST(PlacementExamples, OnePerBeatIncludingLeadIn) {
  const BeatClock clock = BeatClock::constant(120.0, 0.0);
  const BeatFrames song = sample_beat_frames(ramp_spec(2000, 2), clock, 12, 4);
  const auto targets = placement_targets(chart_at({6.0, 7.5}), 12);
  const auto examples = make_placement_examples(song, targets, 3);
  ASSERT_EQ(examples.size(), 12u);
  EXPECT_EQ(examples[6].target[0], 1.0f);
  EXPECT_EQ(examples[7].target[24], 1.0f);
  EXPECT_EQ(examples[0].beat_index, 0);

  PlacementDataset data;
  const auto h = data.add_song(std::make_shared<const BeatFrames>(song));
  data.add_chart(h, targets, 3, "a");
  data.add_chart(h, placement_targets(chart_at({1.0}), 12), 5, "b");
  EXPECT_EQ(data.size(), 24u);
  EXPECT_EQ(data.chart_first(1), 12u);
  EXPECT_EQ(data.example(13).past, make_placement_example(song, nullptr, 1, 5).past);
  EXPECT_EQ(data.example(13).past_aux[1], 5.0f);
  EXPECT_EQ(data.example(13).target[0], 1.0f);
  EXPECT_DOUBLE_EQ(data.positive_rate(), 3.0 / (24.0 * 48.0));
}

TEST(SelectionExamples, HistoryAndDelta) {
  const BeatClock clock = BeatClock::constant(120.0, 0.0);
  const MelSpectrogram spec = ramp_spec(500);
  Chart two = chart_at({0.0, 1.0});
  two.rows[0].symbol = StepSymbol::from_string("0010");
  const auto ex2 = make_selection_examples(two, spec, clock);
  ASSERT_EQ(ex2.size(), 1u);
  for (std::size_t j = 0; j < 63; ++j) EXPECT_EQ(ex2[0].history_symbols[j], 0);
  EXPECT_EQ(ex2[0].history_symbols[63], 4);
  EXPECT_EQ(ex2[0].target, 64);

  const auto ex3 = make_selection_examples(chart_at({1.0, 1.5, 2.0}), spec, clock);
  ASSERT_EQ(ex3.size(), 2u);
  EXPECT_FLOAT_EQ(ex3[0].delta[126], 0.5f);
  EXPECT_FLOAT_EQ(ex3[0].delta[127], 0.5f);
  // The row before it has no predecessor and a 0.5 gap after.
  EXPECT_FLOAT_EQ(ex3[0].delta[124], 0.0f);
  EXPECT_FLOAT_EQ(ex3[0].delta[125], 0.5f);

  for (std::size_t n : {0u, 1u, 5u, 70u}) {
    std::vector<double> beats;
    for (std::size_t i = 0; i < n; ++i) beats.push_back(0.25 * static_cast<double>(i));
    EXPECT_EQ(make_selection_examples(chart_at(beats), spec, clock).size(), n > 0 ? n - 1 : 0);
  }
}

TEST(SelectionExamples, AudioPatches) {
  const BeatClock clock = BeatClock::constant(120.0, 0.0);
  const MelSpectrogram spec = ramp_spec(400);
  const std::vector<double> beats = {0.0, 1.0, 2.5, 3.0, 7.5};
  const auto examples = make_selection_examples(chart_at(beats), spec, clock);
  const auto& ex = examples[1];  // row 2, beat 2.5
  const std::size_t patch = 9 * 4 * 3;
  // Past timesteps 5..7 are rows 0..2; earlier ones are padding.
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t k = 0; k < patch; ++k) EXPECT_EQ(ex.audio_past[t * patch + k], 0.0f);
  }
  for (std::size_t t = 5; t < 8; ++t) {
    const double time = 0.5 * beats[t - 5];
    for (std::size_t p = 0; p < 9; ++p) {
      const long frame = nearest_frame(time) - 4 + static_cast<long>(p);
      const float want = frame >= 0 ? static_cast<float>(frame + 1) : 0.0f;
      EXPECT_EQ(ex.audio_past[t * patch + p * 12], want) << t << " " << p;
    }
  }
  // Future timesteps 0..2 are rows 2..4; the rest pad.
  for (std::size_t t = 0; t < 3; ++t) {
    const double time = 0.5 * beats[2 + t];
    EXPECT_EQ(ex.audio_future[t * patch + 4 * 12], static_cast<float>(nearest_frame(time) + 1));
  }
  for (std::size_t k = 3 * patch; k < ex.audio_future.size(); ++k) EXPECT_EQ(ex.audio_future[k], 0.0f);
}

TEST(Split, EightOneOne) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("song" + std::to_string(i));
  const auto a = split_dataset(ids, 7);
  int counts[3] = {0, 0, 0};
  for (const auto& [id, s] : a) ++counts[static_cast<int>(s)];
  EXPECT_EQ(counts[0], 8);
  EXPECT_EQ(counts[1], 1);
  EXPECT_EQ(counts[2], 1);
  EXPECT_EQ(split_dataset(ids, 7), a);
  std::vector<std::string> reversed(ids.rbegin(), ids.rend());
  EXPECT_EQ(split_dataset(reversed, 7), a);
  EXPECT_THROW(split_dataset({"a", "b"}, 1), DataError);
}

TEST(Split, PartitionSizes) {
  for (std::size_t n = 3; n < 60; ++n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(std::to_string(i));
    for (std::uint64_t seed : {0u, 1u, 99u}) {
      const auto a = split_dataset(ids, seed);
      ASSERT_EQ(a.size(), n);
      double counts[3] = {0, 0, 0};
      for (const auto& [id, s] : a) ++counts[static_cast<int>(s)];
      const double tenth = static_cast<double>(n) / 10.0;
      EXPECT_LE(std::abs(counts[0] - 8 * tenth), 2.0) << n;
      EXPECT_LE(std::abs(counts[1] - tenth), 1.0) << n;
      EXPECT_LE(std::abs(counts[2] - tenth), 1.0) << n;
      EXPECT_GE(counts[0], 1.0);
    }
  }
}

TEST(BatchSampler, EpochAndReplay) {
  BatchSampler a(1000, 32, 5), b(1000, 32, 5);
  std::size_t drawn = 0;
  for (int i = 0; i < 400; ++i) {
    const auto batch = a.next();
    EXPECT_EQ(batch, b.next());
    EXPECT_EQ(batch.size(), 32u);
    drawn += batch.size();
  }
  EXPECT_EQ(drawn, 12800u);
  // Each pass is a permutation: the first 1000 draws cover every index once.
  BatchSampler c(1000, 40, 9);
  std::vector<int> seen(1000, 0);
  for (int i = 0; i < 25; ++i) {
    for (auto k : c.next()) ++seen[k];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(BatchSampler, NoRebalancing) {
  const BeatClock clock = BeatClock::constant(120.0, 0.0);
  const BeatFrames song = sample_beat_frames(ramp_spec(3000, 2), clock, 50, 4);
  Rng rng(2);
  PlacementDataset data;
  const auto h = data.add_song(std::make_shared<const BeatFrames>(song));
  for (int c = 0; c < 8; ++c) {
    std::vector<double> beats;
    for (int t = 0; t < 50 * 48; ++t) {
      if (rng.uniform() < 0.05) beats.push_back(t / 48.0);
    }
    data.add_chart(h, placement_targets(chart_at(beats), 50), 2);
  }
  BatchSampler sampler(data.size(), 32, 4);
  double positives = 0.0, slots = 0.0;
  for (int i = 0; i < 400; ++i) {
    for (auto k : sampler.next()) {
      const auto ex = data.example(k);
      for (float v : ex.target) positives += v;
      slots += 48.0;
    }
  }
  EXPECT_NEAR(positives / slots, data.positive_rate(), 0.01);
}
