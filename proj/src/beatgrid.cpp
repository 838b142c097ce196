#include "stepsmith/beatgrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "stepsmith/error.hpp"

namespace stepsmith {

namespace {

constexpr std::size_t kMaxBeats = 1'000'000;

long nearest_frame(double time_s, double hop_s, std::size_t frames) {
  const double x = std::floor(time_s / hop_s + 0.5);
  if (x < 0.0 || x >= static_cast<double>(frames)) return -1;
  return static_cast<long>(x);
}

void copy_patch(const MelSpectrogram& spec, const BeatClock& clock, double beat,
                std::size_t patch_frames, float* out) {
  const std::size_t stride = spec.frame_stride();
  const double center = std::floor(clock.time(beat) / spec.hop_s + 0.5);
  const double first = center - static_cast<double>(patch_frames / 2);
  for (std::size_t k = 0; k < patch_frames; ++k) {
    const double f = first + static_cast<double>(k);
    if (f < 0.0 || f >= static_cast<double>(spec.frames)) continue;
    const float* src = spec.data.data() + static_cast<std::size_t>(f) * stride;
    std::copy(src, src + stride, out + k * stride);
  }
}

}  // namespace

BeatClock BeatClock::from_simfile(const Simfile& sim) {
  BeatClock c;
  c.timing_.offset_s = sim.offset_s;
  c.timing_.bpm_segments = sim.bpm_segments;
  c.timing_.stop_segments = sim.stop_segments;
  return c;
}

BeatClock BeatClock::from_tempo(const TempoEstimate& tempo) {
  return constant(tempo.bpm, tempo.offset_s);
}

BeatClock BeatClock::constant(double bpm, double offset_s) {
  if (!(bpm > 0.0) || !std::isfinite(bpm)) throw DataError(fmt::format("invalid tempo {} BPM", bpm));
  BeatClock c;
  c.timing_.offset_s = offset_s;
  c.timing_.bpm_segments = {BpmSegment{0.0, bpm}};
  return c;
}

std::size_t BeatClock::beats_before(double duration_s) const {
  std::size_t n = 0;
  while (n < kMaxBeats && time(static_cast<double>(n)) < duration_s) ++n;
  return n;
}

std::vector<long> beat_frame_indices(const BeatClock& clock, std::size_t beat, std::size_t frames,
                                     double hop_s, int samples) {
  std::vector<long> out(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k) {
    const double b = static_cast<double>(beat) + static_cast<double>(k) / samples;
    out[static_cast<std::size_t>(k)] = nearest_frame(clock.time(b), hop_s, frames);
  }
  return out;
}

BeatFrames sample_beat_frames(const MelSpectrogram& spec, const BeatClock& clock,
                              std::size_t n_beats, int samples) {
  if (samples < 1) throw DataError("beat frames need at least one sample per beat");
  BeatFrames out;
  out.beats = n_beats;
  out.samples = static_cast<std::size_t>(samples);
  out.bands = spec.bands;
  out.data.assign(n_beats * out.beat_stride(), 0.0f);
  out.bpm.resize(n_beats);
  const std::size_t stride = spec.frame_stride();
  for (std::size_t b = 0; b < n_beats; ++b) {
    out.bpm[b] = clock.bpm(static_cast<double>(b));
    const auto idx = beat_frame_indices(clock, b, spec.frames, spec.hop_s, samples);
    float* dst = out.data.data() + b * out.beat_stride();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] < 0) continue;
      const float* src = spec.data.data() + static_cast<std::size_t>(idx[k]) * stride;
      std::copy(src, src + stride, dst + k * stride);
    }
  }
  return out;
}

std::vector<BeatFrame> beat_frames(const MelSpectrogram& spec, const TempoEstimate& tempo,
                                   std::size_t n_beats, int difficulty, int samples) {
  if (tempo.bpm < kMinBpm || tempo.bpm > kMaxBpm) {
    throw DataError(fmt::format("tempo {} BPM outside [{}, {}]", tempo.bpm, kMinBpm, kMaxBpm));
  }
  const BeatFrames all = sample_beat_frames(spec, BeatClock::from_tempo(tempo), n_beats, samples);
  std::vector<BeatFrame> out(n_beats);
  for (std::size_t b = 0; b < n_beats; ++b) {
    out[b].data.assign(all.beat(b), all.beat(b) + all.beat_stride());
    out[b].beat_index = static_cast<long>(b);
    out[b].bpm = tempo.bpm;
    out[b].difficulty = difficulty;
  }
  return out;
}

std::vector<PlacementVector> placement_targets(const Chart& chart, std::size_t n_beats,
                                               std::size_t* dropped) {
  std::vector<PlacementVector> out(n_beats);
  for (std::size_t b = 0; b < n_beats; ++b) out[b].beat_index = static_cast<long>(b);
  std::size_t lost = 0;
  for (const Row& row : chart.rows) {
    const auto tick = static_cast<long long>(std::llround(row.beat * kSlotsPerBeat));
    if (tick < 0) throw DataError(fmt::format("row at negative beat {}", row.beat));
    const auto beat = static_cast<std::size_t>(tick / kSlotsPerBeat);
    const auto slot = static_cast<std::size_t>(tick % kSlotsPerBeat);
    if (beat >= n_beats) {
      ++lost;
      continue;
    }
    auto& cell = out[beat].slots[slot];
    if (cell) {
      throw DataError(fmt::format("rows near beat {} collide in placement slot {} of beat {}",
                                  row.beat, slot, beat));
    }
    cell = 1;
  }
  if (dropped) *dropped = lost;
  return out;
}

std::vector<double> placement_beats(const std::vector<PlacementVector>& vectors) {
  std::vector<double> beats;
  for (const PlacementVector& v : vectors) {
    for (int k = 0; k < kSlotsPerBeat; ++k) {
      if (v.slots[static_cast<std::size_t>(k)]) {
        beats.push_back(static_cast<double>(v.beat_index * kSlotsPerBeat + k) / kSlotsPerBeat);
      }
    }
  }
  std::sort(beats.begin(), beats.end());
  return beats;
}

PlacementExample make_placement_example(const BeatFrames& frames,
                                        const std::vector<PlacementVector>* targets,
                                        std::size_t beat, int difficulty, std::size_t context) {
  if (beat >= frames.beats) {
    throw DataError(fmt::format("beat {} outside song of {} beats", beat, frames.beats));
  }
  PlacementExample ex;
  ex.context = context;
  ex.samples = frames.samples;
  ex.bands = frames.bands;
  ex.beat_index = static_cast<long>(beat);
  const std::size_t stride = frames.beat_stride();
  ex.past.assign(context * stride, 0.0f);
  ex.future.assign(context * stride, 0.0f);
  ex.past_aux.resize(context * 2);
  ex.future_aux.resize(context * 2);
  const auto last = static_cast<long>(frames.beats) - 1;
  for (std::size_t t = 0; t < context; ++t) {
    const long pb = static_cast<long>(beat) - static_cast<long>(context - 1 - t);
    const long fb = static_cast<long>(beat + t);
    if (pb >= 0) std::copy(frames.beat(pb), frames.beat(pb) + stride, ex.past.data() + t * stride);
    if (fb <= last) {
      std::copy(frames.beat(fb), frames.beat(fb) + stride, ex.future.data() + t * stride);
    }
    ex.past_aux[2 * t] = static_cast<float>(frames.bpm[static_cast<std::size_t>(std::clamp(pb, 0L, last))]);
    ex.past_aux[2 * t + 1] = static_cast<float>(difficulty);
    ex.future_aux[2 * t] = static_cast<float>(frames.bpm[static_cast<std::size_t>(std::clamp(fb, 0L, last))]);
    ex.future_aux[2 * t + 1] = static_cast<float>(difficulty);
  }
  if (targets) {
    if (beat >= targets->size()) throw DataError("placement targets shorter than beat frames");
    const auto& slots = (*targets)[beat].slots;
    for (std::size_t k = 0; k < slots.size(); ++k) ex.target[k] = slots[k];
  }
  return ex;
}

std::vector<PlacementExample> make_placement_examples(const BeatFrames& frames,
                                                      const std::vector<PlacementVector>& targets,
                                                      int difficulty, std::size_t context) {
  std::vector<PlacementExample> out;
  out.reserve(frames.beats);
  for (std::size_t b = 0; b < frames.beats; ++b) {
    out.push_back(make_placement_example(frames, &targets, b, difficulty, context));
  }
  return out;
}

std::size_t PlacementDataset::add_song(std::shared_ptr<const BeatFrames> frames) {
  songs_.push_back(std::move(frames));
  return songs_.size() - 1;
}

void PlacementDataset::add_chart(std::size_t song, std::vector<PlacementVector> targets,
                                 int difficulty, std::string chart_id) {
  if (song >= songs_.size()) throw DataError("unknown song handle");
  if (targets.size() != songs_[song]->beats) {
    throw DataError(fmt::format("{} placement targets for a song of {} beats", targets.size(),
                                songs_[song]->beats));
  }
  charts_.push_back({song, std::move(targets), difficulty, std::move(chart_id)});
  offsets_.push_back(offsets_.back() + songs_[song]->beats);
}

PlacementExample PlacementDataset::example(std::size_t index) const {
  if (index >= size()) throw DataError(fmt::format("example {} of {}", index, size()));
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), index);
  const auto chart = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  const ChartEntry& c = charts_[chart];
  return make_placement_example(*songs_[c.song], &c.targets, index - offsets_[chart],
                                c.difficulty, context_);
}

double PlacementDataset::positive_rate() const {
  std::size_t ones = 0;
  std::size_t total = 0;
  for (const ChartEntry& c : charts_) {
    for (const PlacementVector& v : c.targets) {
      ones += static_cast<std::size_t>(std::accumulate(v.slots.begin(), v.slots.end(), 0));
      total += v.slots.size();
    }
  }
  return total ? static_cast<double>(ones) / static_cast<double>(total) : 0.0;
}

SelectionExample make_selection_example(const std::vector<double>& beats,
                                        const std::vector<int>& symbols, std::size_t row,
                                        const MelSpectrogram& spec, const BeatClock& clock,
                                        const SelectionGeometry& g) {
  if (row >= beats.size()) throw DataError(fmt::format("row {} of {}", row, beats.size()));
  if (symbols.size() < row) throw DataError("selection history is shorter than the row index");
  SelectionExample ex;
  ex.history = g.history;
  ex.audio_context = g.audio_context;
  ex.patch_frames = g.patch_frames;
  ex.bands = spec.bands;
  ex.history_symbols.assign(g.history, 0);
  ex.delta.assign(g.history * 2, 0.0f);
  const auto r = static_cast<long>(row);
  const auto n = static_cast<long>(beats.size());
  const auto h = static_cast<long>(g.history);
  for (long j = 0; j < h; ++j) {
    const long src = r - h + j;
    if (src >= 0) ex.history_symbols[static_cast<std::size_t>(j)] = symbols[static_cast<std::size_t>(src)];
    const long d = src + 1;
    if (d >= 0) {
      const auto du = static_cast<std::size_t>(d);
      if (d > 0) ex.delta[2 * static_cast<std::size_t>(j)] = static_cast<float>(beats[du] - beats[du - 1]);
      if (d + 1 < n) ex.delta[2 * static_cast<std::size_t>(j) + 1] = static_cast<float>(beats[du + 1] - beats[du]);
    }
  }
  const std::size_t patch = g.patch_frames * spec.frame_stride();
  ex.audio_past.assign(g.audio_context * patch, 0.0f);
  ex.audio_future.assign(g.audio_context * patch, 0.0f);
  const auto a = static_cast<long>(g.audio_context);
  for (long t = 0; t < a; ++t) {
    const long pr = r - (a - 1 - t);
    const long fr = r + t;
    if (pr >= 0) {
      copy_patch(spec, clock, beats[static_cast<std::size_t>(pr)], g.patch_frames,
                 ex.audio_past.data() + static_cast<std::size_t>(t) * patch);
    }
    if (fr < n) {
      copy_patch(spec, clock, beats[static_cast<std::size_t>(fr)], g.patch_frames,
                 ex.audio_future.data() + static_cast<std::size_t>(t) * patch);
    }
  }
  ex.target = row < symbols.size() ? symbols[row] : 0;
  return ex;
}

std::vector<SelectionExample> make_selection_examples(const Chart& chart,
                                                      const MelSpectrogram& spec,
                                                      const BeatClock& clock,
                                                      const SelectionGeometry& geometry) {
  std::vector<double> beats;
  std::vector<int> symbols;
  for (const Row& row : chart.rows) {
    beats.push_back(row.beat);
    symbols.push_back(row.symbol.index());
  }
  std::vector<SelectionExample> out;
  for (std::size_t i = 1; i < beats.size(); ++i) {
    out.push_back(make_selection_example(beats, symbols, i, spec, clock, geometry));
  }
  return out;
}

std::size_t SelectionDataset::add_song(std::shared_ptr<const MelSpectrogram> spec, BeatClock clock) {
  songs_.push_back({std::move(spec), std::move(clock)});
  return songs_.size() - 1;
}

void SelectionDataset::add_chart(std::size_t song, const Chart& chart, std::string chart_id) {
  if (song >= songs_.size()) throw DataError("unknown song handle");
  ChartEntry entry;
  entry.song = song;
  entry.id = std::move(chart_id);
  for (const Row& row : chart.rows) {
    entry.beats.push_back(row.beat);
    entry.symbols.push_back(row.symbol.index());
  }
  const std::size_t count = entry.beats.size() > 1 ? entry.beats.size() - 1 : 0;
  charts_.push_back(std::move(entry));
  offsets_.push_back(offsets_.back() + count);
}

SelectionExample SelectionDataset::example(std::size_t index) const {
  if (index >= size()) throw DataError(fmt::format("example {} of {}", index, size()));
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), index);
  const auto chart = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  const ChartEntry& c = charts_[chart];
  const Song& song = songs_[c.song];
  return make_selection_example(c.beats, c.symbols, index - offsets_[chart] + 1, *song.spec,
                                song.clock, geometry_);
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

SplitAssignment split_dataset(const std::vector<std::string>& song_ids, std::uint64_t seed) {
  std::vector<std::string> ids = song_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 3) {
    throw DataError(fmt::format("need at least 3 songs to split, got {}", ids.size()));
  }
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(ids));
  const auto n = static_cast<double>(ids.size());
  const auto held = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n / 10.0)));
  SplitAssignment out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Split s = Split::Train;
    if (i < held) {
      s = Split::Valid;
    } else if (i < 2 * held) {
      s = Split::Test;
    }
    out.emplace(ids[i], s);
  }
  return out;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed) {
  if (n == 0) throw DataError("cannot sample batches from an empty dataset");
  if (batch_size == 0) throw DataError("batch size must be positive");
  order_.resize(n);
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng_.shuffle(std::span<std::size_t>(order_));
  pos_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> batch;
  batch.reserve(batch_size_);
  while (batch.size() < batch_size_) {
    if (pos_ == n_) reshuffle();
    batch.push_back(order_[pos_++]);
  }
  return batch;
}

}  // namespace stepsmith
