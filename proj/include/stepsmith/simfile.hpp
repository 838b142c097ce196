#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stepsmith {

// Panel columns in .sm order.
enum class Column : std::uint8_t { Left = 0, Down = 1, Up = 2, Right = 3 };

inline constexpr int kColumns = 4;
inline constexpr int kSymbolCount = 256;

// Per-column arrow state.
enum class Arrow : std::uint8_t { None = 0, Tap = 1, HoldStart = 2, Release = 3 };

// One row of a dance-single chart: four arrow states packed as a base-4 number with
// the Left column most significant, so "1000" is index 64 and "0001" is index 1.
class StepSymbol {
 public:
  constexpr StepSymbol() = default;
  constexpr explicit StepSymbol(std::array<std::uint8_t, kColumns> digits) : digits_(digits) {}

  static StepSymbol from_index(int index);
  // Parses four characters in {0,1,2,3}.
  static StepSymbol from_string(std::string_view text);

  int index() const {
    return digits_[0] * 64 + digits_[1] * 16 + digits_[2] * 4 + digits_[3];
  }
  std::uint8_t digit(int column) const { return digits_[static_cast<std::size_t>(column)]; }
  const std::array<std::uint8_t, kColumns>& digits() const { return digits_; }
  bool empty() const { return index() == 0; }
  bool has(Arrow arrow) const;
  std::string to_string() const;

  friend bool operator==(const StepSymbol&, const StepSymbol&) = default;

 private:
  std::array<std::uint8_t, kColumns> digits_{};
};

enum class CoarseDifficulty : std::uint8_t { Beginner, Easy, Medium, Hard, Challenge };

inline constexpr std::array<CoarseDifficulty, 5> kCoarseDifficulties = {
    CoarseDifficulty::Beginner, CoarseDifficulty::Easy, CoarseDifficulty::Medium,
    CoarseDifficulty::Hard, CoarseDifficulty::Challenge};

std::string_view to_string(CoarseDifficulty d);
// Accepts the .sm names (case-insensitive). Returns false for anything else.
bool parse_coarse_difficulty(std::string_view name, CoarseDifficulty& out);

struct Row {
  double beat = 0.0;
  StepSymbol symbol;

  friend bool operator==(const Row&, const Row&) = default;
};

struct Chart {
  CoarseDifficulty coarse = CoarseDifficulty::Beginner;
  int fine = 1;
  std::string description;
  std::vector<Row> rows;  // strictly increasing beats, no empty symbols

  friend bool operator==(const Chart&, const Chart&) = default;
};

struct BpmSegment {
  double start_beat = 0.0;
  double bpm = 120.0;
  friend bool operator==(const BpmSegment&, const BpmSegment&) = default;
};

struct StopSegment {
  double beat = 0.0;
  double duration_s = 0.0;
  friend bool operator==(const StopSegment&, const StopSegment&) = default;
};

struct Simfile {
  std::string title;
  std::string music_path;
  double offset_s = 0.0;  // time of beat 0 in the audio, seconds
  std::vector<BpmSegment> bpm_segments{BpmSegment{}};
  std::vector<StopSegment> stop_segments;
  std::vector<Chart> charts;

  friend bool operator==(const Simfile&, const Simfile&) = default;
};

struct ParseDiagnostics {
  std::vector<std::string> warnings;
};

Simfile parse_simfile(std::string_view source, ParseDiagnostics* diagnostics = nullptr);
Simfile load_simfile(const std::string& path, ParseDiagnostics* diagnostics = nullptr);

std::string write_simfile(const Simfile& sim);
void save_simfile(const Simfile& sim, const std::string& path);

// Throws DataError naming the beat and column of the first violation.
void validate_hold_pairing(const Chart& chart);
// Row ordering, non-empty symbols, hold pairing, fine >= 1.
void validate_chart(const Chart& chart);
// BPM/stop invariants plus validate_chart on every chart.
void validate_simfile(const Simfile& sim);

enum class MirrorAxis : std::uint8_t { LR, UD, Both };

StepSymbol mirror(StepSymbol symbol, MirrorAxis axis);
Chart mirror(const Chart& chart, MirrorAxis axis);

// Each input chart followed by its LR, UD and Both mirrors.
std::vector<Chart> augment_dataset(const std::vector<Chart>& charts);

double beat_to_time(const Simfile& sim, double beat);
double bpm_at(const Simfile& sim, double beat);

}  // namespace stepsmith
