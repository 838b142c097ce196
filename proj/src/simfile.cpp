#include "stepsmith/simfile.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "stepsmith/error.hpp"

namespace stepsmith {

namespace {

constexpr int kTicksPerBeat = 48;
constexpr int kTicksPerMeasure = 4 * kTicksPerBeat;
// Rows-per-measure values the writer may emit, coarsest first. 192 covers the full
// 1/48-beat grid.
constexpr std::array<int, 10> kMeasureSubdivisions = {4, 8, 12, 16, 24, 32, 48, 64, 96, 192};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string to_upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

double parse_double(std::string_view text, int line, std::string_view what) {
  text = trim(text);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw ParseError(line, fmt::format("invalid number '{}' in {}", text, what));
  }
  return value;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  return std::string(buf.data(), ptr);
}

struct Tag {
  std::string name;
  std::string_view value;
  int line = 0;        // line of the '#'
  int value_line = 0;  // line where the value starts
};

// Replaces // comments with spaces so offsets and line numbers stay valid.
std::string strip_comments(std::string_view source) {
  std::string out(source);
  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    if (out[i] == '/' && out[i + 1] == '/') {
      while (i < out.size() && out[i] != '\n') out[i++] = ' ';
    }
  }
  return out;
}

std::vector<Tag> tokenize(std::string_view text) {
  std::vector<Tag> tags;
  int line = 1;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
      ++i;
      continue;
    }
    if (c != '#') {
      ++i;
      continue;
    }
    Tag tag;
    tag.line = line;
    std::size_t colon = i + 1;
    while (colon < text.size() && text[colon] != ':' && text[colon] != ';' && text[colon] != '\n') {
      ++colon;
    }
    if (colon >= text.size() || text[colon] != ':') {
      throw ParseError(line, fmt::format("malformed tag '{}'", trim(text.substr(i, colon - i))));
    }
    tag.name = to_upper(trim(text.substr(i + 1, colon - i - 1)));
    tag.value_line = line;
    const std::size_t end = text.find(';', colon + 1);
    if (end == std::string_view::npos) {
      throw ParseError(line, fmt::format("unterminated #{} block (missing ';')", tag.name));
    }
    tag.value = text.substr(colon + 1, end - colon - 1);
    line += static_cast<int>(std::count(tag.value.begin(), tag.value.end(), '\n'));
    tags.push_back(std::move(tag));
    i = end + 1;
  }
  return tags;
}

std::vector<BpmSegment> parse_bpms(std::string_view value, int line) {
  std::vector<BpmSegment> segments;
  for (std::string_view entry : split(value, ',')) {
    entry = trim(entry);
    if (entry.empty()) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(line, fmt::format("BPMS entry '{}' is not beat=bpm", entry));
    }
    BpmSegment seg{parse_double(entry.substr(0, eq), line, "BPMS"),
                   parse_double(entry.substr(eq + 1), line, "BPMS")};
    if (seg.bpm <= 0.0) {
      throw ParseError(line, fmt::format("non-positive BPM {} at beat {}", seg.bpm, seg.start_beat));
    }
    segments.push_back(seg);
  }
  return segments;
}

std::vector<StopSegment> parse_stops(std::string_view value, int line) {
  std::vector<StopSegment> stops;
  for (std::string_view entry : split(value, ',')) {
    entry = trim(entry);
    if (entry.empty()) continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(line, fmt::format("STOPS entry '{}' is not beat=seconds", entry));
    }
    stops.push_back({parse_double(entry.substr(0, eq), line, "STOPS"),
                     parse_double(entry.substr(eq + 1), line, "STOPS")});
  }
  return stops;
}

// Maps one note character to a digit; returns -1 for invalid characters and sets
// `exotic` for characters that degrade to 0.
int note_digit(char c, bool& exotic) {
  exotic = false;
  switch (c) {
    case '0': return 0;
    case '1': return 1;
    case '2': return 2;
    case '3': return 3;
    case '4': return 2;  // roll -> hold start, keeps the '3' pairing
    case 'M': case 'm': return 0;  // mine
    case 'L': case 'l': case 'F': case 'f': case 'K': case 'k':
      exotic = true;
      return 0;
    default: return -1;
  }
}

std::vector<Row> parse_note_data(std::string_view data, int first_line, ParseDiagnostics* diag,
                                 std::string_view chart_name) {
  std::vector<Row> rows;
  std::array<bool, kColumns> held{};
  std::array<double, kColumns> held_since{};
  std::set<char> warned;
  int line = first_line;
  std::int64_t measure = 0;
  for (std::string_view measure_text : split(data, ',')) {
    std::vector<std::pair<std::string_view, int>> lines;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= measure_text.size(); ++i) {
      if (i == measure_text.size() || measure_text[i] == '\n') {
        std::string_view l = trim(measure_text.substr(start, i - start));
        if (!l.empty()) lines.emplace_back(l, line);
        if (i < measure_text.size()) ++line;
        start = i + 1;
      }
    }
    if (lines.empty()) {
      throw ParseError(line, fmt::format("{}: measure {} has no rows", chart_name, measure));
    }
    const auto count = static_cast<std::int64_t>(lines.size());
    for (std::int64_t r = 0; r < count; ++r) {
      const auto& [text, text_line] = lines[static_cast<std::size_t>(r)];
      if (text.size() != kColumns) {
        throw ParseError(text_line, fmt::format("{}: note row '{}' must have 4 columns",
                                                chart_name, text));
      }
      // Exact rational beat: (4*measure*count + 4*r) / count.
      const double beat = static_cast<double>(4 * measure * count + 4 * r) /
                          static_cast<double>(count);
      std::array<std::uint8_t, kColumns> digits{};
      for (int c = 0; c < kColumns; ++c) {
        bool exotic = false;
        const int d = note_digit(text[static_cast<std::size_t>(c)], exotic);
        if (d < 0) {
          throw ParseError(text_line, fmt::format("{}: invalid note character '{}'", chart_name,
                                                  text[static_cast<std::size_t>(c)]));
        }
        if (exotic && diag && warned.insert(text[static_cast<std::size_t>(c)]).second) {
          diag->warnings.push_back(fmt::format("{}: note type '{}' is not supported, treated as empty",
                                               chart_name, text[static_cast<std::size_t>(c)]));
        }
        const auto col = static_cast<std::size_t>(c);
        if (d == 2) {
          if (held[col]) {
            throw ParseError(text_line,
                             fmt::format("{}: hold start at beat {} column {} while a hold from "
                                         "beat {} is still open",
                                         chart_name, beat, c, held_since[col]));
          }
          held[col] = true;
          held_since[col] = beat;
        } else if (d == 3) {
          if (!held[col]) {
            throw ParseError(text_line, fmt::format("{}: release at beat {} column {} without a hold",
                                                    chart_name, beat, c));
          }
          held[col] = false;
        }
        digits[col] = static_cast<std::uint8_t>(d);
      }
      StepSymbol symbol(digits);
      if (!symbol.empty()) rows.push_back({beat, symbol});
    }
    ++measure;
  }
  for (int c = 0; c < kColumns; ++c) {
    if (held[static_cast<std::size_t>(c)]) {
      throw ParseError(line, fmt::format("{}: hold at beat {} column {} is never released",
                                         chart_name, held_since[static_cast<std::size_t>(c)], c));
    }
  }
  return rows;
}

void check_bpm_segments(const std::vector<BpmSegment>& segments) {
  if (segments.empty()) throw DataError("simfile has no BPM segments");
  if (segments.front().start_beat != 0.0) {
    throw DataError(fmt::format("first BPM segment starts at beat {}, expected 0",
                                segments.front().start_beat));
  }
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!(segments[i].bpm > 0.0) || !std::isfinite(segments[i].bpm)) {
      throw DataError(fmt::format("non-positive BPM {} at beat {}", segments[i].bpm,
                                  segments[i].start_beat));
    }
    if (i > 0 && !(segments[i].start_beat > segments[i - 1].start_beat)) {
      throw DataError(fmt::format("BPM segments not strictly increasing at beat {}",
                                  segments[i].start_beat));
    }
  }
}

void check_stop_segments(const std::vector<StopSegment>& stops) {
  for (std::size_t i = 0; i < stops.size(); ++i) {
    if (!(stops[i].duration_s >= 0.0)) {
      throw DataError(fmt::format("negative stop duration at beat {}", stops[i].beat));
    }
    if (i > 0 && !(stops[i].beat > stops[i - 1].beat)) {
      throw DataError(fmt::format("stops not strictly increasing at beat {}", stops[i].beat));
    }
  }
}

}  // namespace

StepSymbol StepSymbol::from_index(int index) {
  if (index < 0 || index >= kSymbolCount) {
    throw DataError(fmt::format("step symbol index {} out of range", index));
  }
  return StepSymbol({static_cast<std::uint8_t>((index >> 6) & 3),
                     static_cast<std::uint8_t>((index >> 4) & 3),
                     static_cast<std::uint8_t>((index >> 2) & 3),
                     static_cast<std::uint8_t>(index & 3)});
}

StepSymbol StepSymbol::from_string(std::string_view text) {
  if (text.size() != kColumns) throw DataError(fmt::format("bad step symbol '{}'", text));
  std::array<std::uint8_t, kColumns> digits{};
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (text[i] < '0' || text[i] > '3') throw DataError(fmt::format("bad step symbol '{}'", text));
    digits[i] = static_cast<std::uint8_t>(text[i] - '0');
  }
  return StepSymbol(digits);
}

bool StepSymbol::has(Arrow arrow) const {
  return std::find(digits_.begin(), digits_.end(), static_cast<std::uint8_t>(arrow)) !=
         digits_.end();
}

std::string StepSymbol::to_string() const {
  std::string s(kColumns, '0');
  for (std::size_t i = 0; i < digits_.size(); ++i) s[i] = static_cast<char>('0' + digits_[i]);
  return s;
}

std::string_view to_string(CoarseDifficulty d) {
  switch (d) {
    case CoarseDifficulty::Beginner: return "Beginner";
    case CoarseDifficulty::Easy: return "Easy";
    case CoarseDifficulty::Medium: return "Medium";
    case CoarseDifficulty::Hard: return "Hard";
    case CoarseDifficulty::Challenge: return "Challenge";
  }
  return "Beginner";
}

bool parse_coarse_difficulty(std::string_view name, CoarseDifficulty& out) {
  const std::string upper = to_upper(trim(name));
  for (CoarseDifficulty d : kCoarseDifficulties) {
    if (upper == to_upper(to_string(d))) {
      out = d;
      return true;
    }
  }
  // Older files label the top slot "Expert".
  if (upper == "EXPERT") {
    out = CoarseDifficulty::Challenge;
    return true;
  }
  return false;
}

Simfile parse_simfile(std::string_view source, ParseDiagnostics* diagnostics) {
  const std::string text = strip_comments(source);
  Simfile sim;
  sim.bpm_segments.clear();
  bool have_bpms = false;
  int bpm_line = 1;
  for (const Tag& tag : tokenize(text)) {
    if (tag.name == "TITLE") {
      sim.title = std::string(trim(tag.value));
    } else if (tag.name == "MUSIC") {
      sim.music_path = std::string(trim(tag.value));
    } else if (tag.name == "OFFSET") {
      // .sm stores the negated time of beat 0.
      sim.offset_s = -parse_double(tag.value, tag.value_line, "OFFSET");
    } else if (tag.name == "BPMS") {
      sim.bpm_segments = parse_bpms(tag.value, tag.value_line);
      have_bpms = true;
      bpm_line = tag.line;
    } else if (tag.name == "STOPS" || tag.name == "FREEZES") {
      sim.stop_segments = parse_stops(tag.value, tag.value_line);
    } else if (tag.name == "NOTES") {
      const auto fields = split(tag.value, ':');
      if (fields.size() != 6) {
        throw ParseError(tag.line, fmt::format("#NOTES block has {} fields, expected 6",
                                               fields.size()));
      }
      const std::string_view type = trim(fields[0]);
      if (type != "dance-single") {
        if (diagnostics) {
          diagnostics->warnings.push_back(fmt::format("line {}: skipping {} chart", tag.line, type));
        }
        continue;
      }
      Chart chart;
      chart.description = std::string(trim(fields[1]));
      if (!parse_coarse_difficulty(fields[2], chart.coarse)) {
        if (diagnostics) {
          diagnostics->warnings.push_back(fmt::format("line {}: skipping chart with difficulty '{}'",
                                                      tag.line, trim(fields[2])));
        }
        continue;
      }
      const double meter = parse_double(fields[3], tag.value_line, "meter");
      chart.fine = static_cast<int>(std::lround(meter));
      if (chart.fine < 1) {
        if (diagnostics) {
          diagnostics->warnings.push_back(
              fmt::format("line {}: meter {} raised to 1", tag.line, chart.fine));
        }
        chart.fine = 1;
      }
      int data_line = tag.value_line;
      for (std::size_t f = 0; f < 5; ++f) {
        data_line += static_cast<int>(std::count(fields[f].begin(), fields[f].end(), '\n'));
      }
      const std::string name = fmt::format("{} {}", to_string(chart.coarse), chart.fine);
      chart.rows = parse_note_data(fields[5], data_line, diagnostics, name);
      sim.charts.push_back(std::move(chart));
    }
  }
  if (!have_bpms) throw ParseError(1, "missing #BPMS tag");
  try {
    check_bpm_segments(sim.bpm_segments);
    check_stop_segments(sim.stop_segments);
  } catch (const DataError& e) {
    throw ParseError(bpm_line, e.what());
  }
  return sim;
}

Simfile load_simfile(const std::string& path, ParseDiagnostics* diagnostics) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open simfile '{}'", path));
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_simfile(buf.str(), diagnostics);
  } catch (const ParseError& e) {
    throw DataError(fmt::format("{}: {}", path, e.what()));
  }
}

void validate_hold_pairing(const Chart& chart) {
  std::array<bool, kColumns> held{};
  std::array<double, kColumns> since{};
  for (const Row& row : chart.rows) {
    for (int c = 0; c < kColumns; ++c) {
      const auto col = static_cast<std::size_t>(c);
      const auto d = row.symbol.digit(c);
      if (d == 2) {
        if (held[col]) {
          throw DataError(fmt::format("hold start at beat {} column {} while a hold from beat {} "
                                      "is open", row.beat, c, since[col]));
        }
        held[col] = true;
        since[col] = row.beat;
      } else if (d == 3) {
        if (!held[col]) {
          throw DataError(fmt::format("release at beat {} column {} without a hold", row.beat, c));
        }
        held[col] = false;
      }
    }
  }
  for (int c = 0; c < kColumns; ++c) {
    if (held[static_cast<std::size_t>(c)]) {
      throw DataError(fmt::format("hold at beat {} column {} is never released",
                                  since[static_cast<std::size_t>(c)], c));
    }
  }
}

void validate_chart(const Chart& chart) {
  if (chart.fine < 1) throw DataError(fmt::format("fine difficulty {} < 1", chart.fine));
  for (std::size_t i = 0; i < chart.rows.size(); ++i) {
    const Row& row = chart.rows[i];
    if (!(row.beat >= 0.0) || !std::isfinite(row.beat)) {
      throw DataError(fmt::format("row beat {} is negative or not finite", row.beat));
    }
    if (row.symbol.empty()) throw DataError(fmt::format("empty row at beat {}", row.beat));
    if (i > 0 && !(row.beat > chart.rows[i - 1].beat)) {
      throw DataError(fmt::format("rows not strictly increasing at beat {}", row.beat));
    }
  }
  validate_hold_pairing(chart);
}

void validate_simfile(const Simfile& sim) {
  check_bpm_segments(sim.bpm_segments);
  check_stop_segments(sim.stop_segments);
  for (const Chart& chart : sim.charts) validate_chart(chart);
}

std::string write_simfile(const Simfile& sim) {
  validate_simfile(sim);
  std::string out;
  out += fmt::format("#TITLE:{};\n", sim.title);
  out += fmt::format("#MUSIC:{};\n", sim.music_path);
  out += fmt::format("#OFFSET:{};\n", format_double(-sim.offset_s));
  out += "#BPMS:";
  for (std::size_t i = 0; i < sim.bpm_segments.size(); ++i) {
    if (i) out += ",";
    out += format_double(sim.bpm_segments[i].start_beat) + "=" +
           format_double(sim.bpm_segments[i].bpm);
  }
  out += ";\n#STOPS:";
  for (std::size_t i = 0; i < sim.stop_segments.size(); ++i) {
    if (i) out += ",";
    out += format_double(sim.stop_segments[i].beat) + "=" +
           format_double(sim.stop_segments[i].duration_s);
  }
  out += ";\n";

  for (const Chart& chart : sim.charts) {
    // Ticks per row on a 192-tick measure.
    std::vector<std::int64_t> ticks;
    ticks.reserve(chart.rows.size());
    for (const Row& row : chart.rows) {
      const double scaled = row.beat * kTicksPerBeat;
      const double rounded = std::round(scaled);
      if (std::abs(scaled - rounded) > 1e-6) {
        throw DataError(fmt::format("row beat {} is not on the 1/48-beat grid", row.beat));
      }
      ticks.push_back(static_cast<std::int64_t>(rounded));
    }
    const std::int64_t measures =
        ticks.empty() ? 1 : ticks.back() / kTicksPerMeasure + 1;

    out += fmt::format("\n//---------------dance-single - {}----------------\n", chart.description);
    out += "#NOTES:\n     dance-single:\n";
    out += fmt::format("     {}:\n     {}:\n     {}:\n", chart.description, to_string(chart.coarse),
                       chart.fine);
    out += "     0.000,0.000,0.000,0.000,0.000:\n";
    std::size_t next = 0;
    for (std::int64_t m = 0; m < measures; ++m) {
      const std::size_t first = next;
      while (next < ticks.size() && ticks[next] / kTicksPerMeasure == m) ++next;
      int rows_per_measure = kMeasureSubdivisions.back();
      for (int sub : kMeasureSubdivisions) {
        const int spacing = kTicksPerMeasure / sub;
        bool exact = true;
        for (std::size_t i = first; i < next && exact; ++i) {
          exact = (ticks[i] % kTicksPerMeasure) % spacing == 0;
        }
        if (exact) {
          rows_per_measure = sub;
          break;
        }
      }
      const int spacing = kTicksPerMeasure / rows_per_measure;
      std::vector<std::string> lines(static_cast<std::size_t>(rows_per_measure), "0000");
      for (std::size_t i = first; i < next; ++i) {
        const auto slot = static_cast<std::size_t>((ticks[i] % kTicksPerMeasure) / spacing);
        lines[slot] = chart.rows[i].symbol.to_string();
      }
      for (const auto& l : lines) {
        out += l;
        out += '\n';
      }
      out += (m + 1 < measures) ? ",\n" : ";\n";
    }
  }
  return out;
}

void save_simfile(const Simfile& sim, const std::string& path) {
  const std::string text = write_simfile(sim);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write simfile '{}'", path));
  out << text;
}

StepSymbol mirror(StepSymbol symbol, MirrorAxis axis) {
  auto d = symbol.digits();
  if (axis == MirrorAxis::LR || axis == MirrorAxis::Both) std::swap(d[0], d[3]);
  if (axis == MirrorAxis::UD || axis == MirrorAxis::Both) std::swap(d[1], d[2]);
  return StepSymbol(d);
}

Chart mirror(const Chart& chart, MirrorAxis axis) {
  Chart out = chart;
  for (Row& row : out.rows) row.symbol = mirror(row.symbol, axis);
  return out;
}

std::vector<Chart> augment_dataset(const std::vector<Chart>& charts) {
  std::vector<Chart> out;
  out.reserve(charts.size() * 4);
  for (const Chart& chart : charts) {
    out.push_back(chart);
    out.push_back(mirror(chart, MirrorAxis::LR));
    out.push_back(mirror(chart, MirrorAxis::UD));
    out.push_back(mirror(chart, MirrorAxis::Both));
  }
  return out;
}

double beat_to_time(const Simfile& sim, double beat) {
  double t = sim.offset_s;
  const auto& segs = sim.bpm_segments;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const double start = segs[i].start_beat;
    if (beat <= start) break;
    const double end = i + 1 < segs.size() ? segs[i + 1].start_beat
                                           : std::numeric_limits<double>::infinity();
    t += (std::min(beat, end) - start) * 60.0 / segs[i].bpm;
  }
  for (const StopSegment& stop : sim.stop_segments) {
    if (stop.beat < beat) t += stop.duration_s;
  }
  return t;
}

double bpm_at(const Simfile& sim, double beat) {
  double bpm = sim.bpm_segments.front().bpm;
  for (const BpmSegment& seg : sim.bpm_segments) {
    if (seg.start_beat <= beat) bpm = seg.bpm;
  }
  return bpm;
}

}  // namespace stepsmith
