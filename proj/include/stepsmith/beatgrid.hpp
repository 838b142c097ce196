#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stepsmith/audiofeat.hpp"
#include "stepsmith/random.hpp"
#include "stepsmith/simfile.hpp"
#include "stepsmith/tempo.hpp"

namespace stepsmith {

inline constexpr int kSlotsPerBeat = 48;
inline constexpr int kSamplesPerBeat = 32;
inline constexpr int kPlacementContext = 16;
inline constexpr int kSelectionHistory = 64;
inline constexpr int kSelectionAudioContext = 8;
inline constexpr int kSelectionPatchFrames = 9;

// Maps beats to seconds. Either a chart's own timing (BPM segments, stops, offset) or a
// single global tempo estimate.
class BeatClock {
 public:
  static BeatClock from_simfile(const Simfile& sim);
  static BeatClock from_tempo(const TempoEstimate& tempo);
  static BeatClock constant(double bpm, double offset_s);

  double time(double beat) const { return beat_to_time(timing_, beat); }
  double bpm(double beat) const { return bpm_at(timing_, beat); }
  double offset_s() const { return timing_.offset_s; }
  const Simfile& timing() const { return timing_; }

  // Number of beats b >= 0 whose start time lies inside [.., duration_s).
  std::size_t beats_before(double duration_s) const;

 private:
  Simfile timing_;
};

// Spectrogram frame nearest to each of the `samples` evenly spaced times across beat
// `beat` (right endpoint excluded); -1 where the time falls outside the audio.
std::vector<long> beat_frame_indices(const BeatClock& clock, std::size_t beat, std::size_t frames,
                                     double hop_s, int samples = kSamplesPerBeat);

struct BeatFrame {
  std::vector<float> data;  // (samples, bands, 3)
  long beat_index = 0;
  double bpm = 0.0;
  int difficulty = 0;
};

// All beat frames of a song, stored contiguously: (beats, samples, bands, 3).
struct BeatFrames {
  std::size_t beats = 0;
  std::size_t samples = kSamplesPerBeat;
  std::size_t bands = kDefaultMelBands;
  std::vector<float> data;
  std::vector<double> bpm;  // per beat

  std::size_t beat_stride() const { return samples * bands * kStftChannels; }
  const float* beat(std::size_t b) const { return data.data() + b * beat_stride(); }
};

BeatFrames sample_beat_frames(const MelSpectrogram& spec, const BeatClock& clock,
                              std::size_t n_beats, int samples = kSamplesPerBeat);

// Constant-tempo form. Throws DataError when the tempo lies outside [60, 240] BPM.
std::vector<BeatFrame> beat_frames(const MelSpectrogram& spec, const TempoEstimate& tempo,
                                   std::size_t n_beats, int difficulty,
                                   int samples = kSamplesPerBeat);

struct PlacementVector {
  std::array<std::uint8_t, kSlotsPerBeat> slots{};
  long beat_index = 0;

  friend bool operator==(const PlacementVector&, const PlacementVector&) = default;
};

// Each row sets slot tick % 48 of vector tick / 48 where tick = round(48 * beat). Rows
// at or beyond n_beats are dropped and counted in `dropped`. Two rows landing in the
// same slot is a DataError.
std::vector<PlacementVector> placement_targets(const Chart& chart, std::size_t n_beats,
                                               std::size_t* dropped = nullptr);

// Inverse of placement_targets: the beat of every set slot, ascending.
std::vector<double> placement_beats(const std::vector<PlacementVector>& vectors);

struct PlacementExample {
  std::size_t context = kPlacementContext;
  std::size_t samples = kSamplesPerBeat;
  std::size_t bands = kDefaultMelBands;
  std::vector<float> past;    // (context, samples, bands, 3); last timestep is the current beat
  std::vector<float> future;  // same layout; first timestep is the current beat
  std::vector<float> past_aux;    // (context, 2): bpm, difficulty
  std::vector<float> future_aux;  // (context, 2)
  std::array<float, kSlotsPerBeat> target{};
  long beat_index = 0;
};

PlacementExample make_placement_example(const BeatFrames& frames,
                                        const std::vector<PlacementVector>* targets,
                                        std::size_t beat, int difficulty,
                                        std::size_t context = kPlacementContext);

std::vector<PlacementExample> make_placement_examples(const BeatFrames& frames,
                                                      const std::vector<PlacementVector>& targets,
                                                      int difficulty,
                                                      std::size_t context = kPlacementContext);

// Examples for many charts, built on demand: each chart contributes one example per
// beat of its song's frames.
class PlacementDataset {
 public:
  explicit PlacementDataset(std::size_t context = kPlacementContext) : context_(context) {}

  // Returns the song handle to pass to add_chart.
  std::size_t add_song(std::shared_ptr<const BeatFrames> frames);
  void add_chart(std::size_t song, std::vector<PlacementVector> targets, int difficulty,
                 std::string chart_id = {});

  std::size_t size() const { return offsets_.empty() ? 0 : offsets_.back(); }
  std::size_t chart_count() const { return charts_.size(); }
  std::size_t context() const { return context_; }

  PlacementExample example(std::size_t index) const;
  // Example range [first, first + count) belonging to chart `chart`.
  std::size_t chart_first(std::size_t chart) const { return offsets_[chart]; }
  std::size_t chart_size(std::size_t chart) const { return offsets_[chart + 1] - offsets_[chart]; }
  const std::string& chart_id(std::size_t chart) const { return charts_[chart].id; }
  int chart_difficulty(std::size_t chart) const { return charts_[chart].difficulty; }
  const std::vector<PlacementVector>& chart_targets(std::size_t chart) const {
    return charts_[chart].targets;
  }

  // Fraction of set slots over all examples.
  double positive_rate() const;

 private:
  struct ChartEntry {
    std::size_t song = 0;
    std::vector<PlacementVector> targets;
    int difficulty = 0;
    std::string id;
  };
  std::size_t context_;
  std::vector<std::shared_ptr<const BeatFrames>> songs_;
  std::vector<ChartEntry> charts_;
  std::vector<std::size_t> offsets_{0};
};

struct SelectionGeometry {
  std::size_t history = kSelectionHistory;
  std::size_t audio_context = kSelectionAudioContext;
  std::size_t patch_frames = kSelectionPatchFrames;
};

struct SelectionExample {
  std::size_t history = kSelectionHistory;
  std::size_t audio_context = kSelectionAudioContext;
  std::size_t patch_frames = kSelectionPatchFrames;
  std::size_t bands = kDefaultMelBands;
  // history[j] is the symbol of row i - H + j (0 before the chart starts).
  std::vector<int> history_symbols;
  // delta[j] = (gap to previous row, gap to next row) of row i - H + 1 + j, so the last
  // entry describes the row being predicted. Missing gaps are 0.
  std::vector<float> delta;  // (H, 2)
  // Patches of patch_frames frames centered on rows i-A+1..i (past) and i..i+A-1
  // (future); rows outside the chart and frames outside the audio are zero.
  std::vector<float> audio_past;    // (A, patch, bands, 3)
  std::vector<float> audio_future;  // (A, patch, bands, 3)
  int target = 0;
};

// Example for row `row` given the symbols of rows [0, row). `beats` holds every row's
// beat; `symbols` may be shorter than `beats` (generation fills it as it goes).
SelectionExample make_selection_example(const std::vector<double>& beats,
                                        const std::vector<int>& symbols, std::size_t row,
                                        const MelSpectrogram& spec, const BeatClock& clock,
                                        const SelectionGeometry& geometry = {});

// One example per row with at least one preceding row.
std::vector<SelectionExample> make_selection_examples(const Chart& chart,
                                                      const MelSpectrogram& spec,
                                                      const BeatClock& clock,
                                                      const SelectionGeometry& geometry = {});

class SelectionDataset {
 public:
  explicit SelectionDataset(SelectionGeometry geometry = {}) : geometry_(geometry) {}

  std::size_t add_song(std::shared_ptr<const MelSpectrogram> spec, BeatClock clock);
  void add_chart(std::size_t song, const Chart& chart, std::string chart_id = {});

  std::size_t size() const { return offsets_.empty() ? 0 : offsets_.back(); }
  std::size_t chart_count() const { return charts_.size(); }
  const SelectionGeometry& geometry() const { return geometry_; }

  SelectionExample example(std::size_t index) const;
  std::size_t chart_first(std::size_t chart) const { return offsets_[chart]; }
  std::size_t chart_size(std::size_t chart) const { return offsets_[chart + 1] - offsets_[chart]; }
  const std::string& chart_id(std::size_t chart) const { return charts_[chart].id; }

 private:
  struct Song {
    std::shared_ptr<const MelSpectrogram> spec;
    BeatClock clock;
  };
  struct ChartEntry {
    std::size_t song = 0;
    std::vector<double> beats;
    std::vector<int> symbols;
    std::string id;
  };
  SelectionGeometry geometry_;
  std::vector<Song> songs_;
  std::vector<ChartEntry> charts_;
  std::vector<std::size_t> offsets_{0};
};

enum class Split : std::uint8_t { Train, Valid, Test };

std::string_view to_string(Split split);

using SplitAssignment = std::map<std::string, Split>;

// Song-level 8/1/1 split: valid and test each get max(1, round(n/10)) songs after a
// seeded shuffle of the sorted ids. Needs at least 3 distinct songs.
SplitAssignment split_dataset(const std::vector<std::string>& song_ids, std::uint64_t seed);

// Endless stream of index batches drawn from successive seeded permutations of
// [0, n). No rebalancing.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();

 private:
  void reshuffle();

  std::size_t n_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace stepsmith
