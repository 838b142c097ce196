#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "stepsmith/error.hpp"
#include "stepsmith/pipeline.hpp"

namespace stepsmith {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class N>
N parse_number(std::string_view key, std::string_view text) {
  N value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw UsageError(fmt::format("config key '{}': cannot parse '{}'", key, text));
  }
  return value;
}

std::size_t parse_size(std::string_view key, std::string_view text) {
  return parse_number<std::size_t>(key, text);
}

double parse_real(std::string_view key, std::string_view text) {
  const double v = parse_number<double>(key, text);
  if (!std::isfinite(v)) throw UsageError(fmt::format("config key '{}' must be finite", key));
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw UsageError(fmt::format("config key '{}': expected true or false, got '{}'", key, text));
}

template <class N>
std::vector<N> parse_list(std::string_view key, std::string_view text) {
  std::vector<N> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    out.push_back(parse_number<N>(key, trim(text.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (out.empty()) throw UsageError(fmt::format("config key '{}' needs at least one value", key));
  return out;
}

using Setter = std::function<void(PipelineConfig&, std::string_view, std::string_view)>;

void add_train_keys(std::map<std::string, Setter, std::less<>>& keys, const std::string& prefix,
                    TrainConfig PipelineConfig::*member) {
  keys[prefix + ".batch_size"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).batch_size = parse_size(k, v);
  };
  keys[prefix + ".batches_per_epoch"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).batches_per_epoch = parse_size(k, v);
  };
  keys[prefix + ".max_epochs"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).max_epochs = parse_size(k, v);
  };
  keys[prefix + ".lr"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).lr = parse_real(k, v);
  };
  keys[prefix + ".warmup"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).warmup = parse_size(k, v);
  };
  keys[prefix + ".patience"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).patience = parse_size(k, v);
  };
  keys[prefix + ".plateau_factor"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).plateau_factor = parse_real(k, v);
  };
  keys[prefix + ".plateau_patience"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).plateau_patience = parse_size(k, v);
  };
  keys[prefix + ".max_valid_examples"] = [member](PipelineConfig& c, auto k, auto v) {
    (c.*member).max_valid_examples = parse_size(k, v);
  };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const auto table = [] {
    std::map<std::string, Setter, std::less<>> k;
    k["dataset_dir"] = [](PipelineConfig& c, auto, auto v) { c.dataset_dir = v; };
    k["cache_dir"] = [](PipelineConfig& c, auto, auto v) { c.cache_dir = v; };
    k["out_dir"] = [](PipelineConfig& c, auto, auto v) { c.out_dir = v; };
    k["placement_checkpoint"] = [](PipelineConfig& c, auto, auto v) { c.placement_checkpoint = v; };
    k["selection_checkpoint"] = [](PipelineConfig& c, auto, auto v) { c.selection_checkpoint = v; };
    k["seed"] = [](PipelineConfig& c, auto key, auto v) {
      c.seed = parse_number<std::uint64_t>(key, v);
      c.placement_train.seed = c.seed;
      c.selection_train.seed = c.seed;
    };
    k["preset"] = [](PipelineConfig& c, auto key, auto v) {
      if (v == "full") {
        c.placement = PlacementConfig{};
        c.selection = SelectionConfig{};
      } else if (v == "toy") {
        c.placement = PlacementConfig::toy();
        c.selection = SelectionConfig::toy();
      } else {
        throw UsageError(fmt::format("config key '{}': expected full or toy, got '{}'", key, v));
      }
      c.bands = c.placement.bands;
    };
    k["bands"] = [](PipelineConfig& c, auto key, auto v) {
      c.bands = parse_size(key, v);
      c.placement.bands = c.bands;
      c.selection.bands = c.bands;
    };
    k["placement.context"] = [](PipelineConfig& c, auto key, auto v) { c.placement.context = parse_size(key, v); };
    k["placement.samples"] = [](PipelineConfig& c, auto key, auto v) { c.placement.samples = parse_size(key, v); };
    k["placement.conv_units"] = [](PipelineConfig& c, auto key, auto v) { c.placement.conv_units = parse_list<std::size_t>(key, v); };
    k["placement.pool_width"] = [](PipelineConfig& c, auto key, auto v) { c.placement.pool_width = parse_size(key, v); };
    k["placement.pool_stride"] = [](PipelineConfig& c, auto key, auto v) { c.placement.pool_stride = parse_size(key, v); };
    k["placement.lstm_units"] = [](PipelineConfig& c, auto key, auto v) { c.placement.lstm_units = parse_size(key, v); };
    k["placement.lstm_layers"] = [](PipelineConfig& c, auto key, auto v) { c.placement.lstm_layers = parse_size(key, v); };
    k["placement.dense_units"] = [](PipelineConfig& c, auto key, auto v) { c.placement.dense_units = parse_list<std::size_t>(key, v); };
    k["placement.lstm_dropout"] = [](PipelineConfig& c, auto key, auto v) { c.placement.lstm_dropout = parse_real(key, v); };
    k["placement.dense_dropout"] = [](PipelineConfig& c, auto key, auto v) { c.placement.dense_dropout = parse_real(key, v); };
    k["selection.history"] = [](PipelineConfig& c, auto key, auto v) { c.selection.history = parse_size(key, v); };
    k["selection.lstm_units"] = [](PipelineConfig& c, auto key, auto v) { c.selection.lstm_units = parse_size(key, v); };
    k["selection.lstm_layers"] = [](PipelineConfig& c, auto key, auto v) { c.selection.lstm_layers = parse_size(key, v); };
    k["selection.audio_context"] = [](PipelineConfig& c, auto key, auto v) { c.selection.audio_context = parse_size(key, v); };
    k["selection.patch_frames"] = [](PipelineConfig& c, auto key, auto v) { c.selection.patch_frames = parse_size(key, v); };
    k["selection.conv_units"] = [](PipelineConfig& c, auto key, auto v) { c.selection.conv_units = parse_list<std::size_t>(key, v); };
    k["selection.dense_units"] = [](PipelineConfig& c, auto key, auto v) { c.selection.dense_units = parse_list<std::size_t>(key, v); };
    k["selection.dense_dropout"] = [](PipelineConfig& c, auto key, auto v) { c.selection.dense_dropout = parse_real(key, v); };
    k["selection.use_audio"] = [](PipelineConfig& c, auto key, auto v) { c.selection.use_audio = parse_bool(key, v); };
    add_train_keys(k, "placement", &PipelineConfig::placement_train);
    add_train_keys(k, "selection", &PipelineConfig::selection_train);
    k["eval_split"] = [](PipelineConfig& c, auto key, auto v) {
      if (v != "train" && v != "valid" && v != "test" && v != "all") {
        throw UsageError(fmt::format("config key '{}': expected train, valid, test or all", key));
      }
      c.eval_split = v;
    };
    k["threshold"] = [](PipelineConfig& c, auto key, auto v) { c.threshold = parse_real(key, v); };
    k["temperature"] = [](PipelineConfig& c, auto key, auto v) { c.temperature = parse_real(key, v); };
    k["difficulty"] = [](PipelineConfig& c, auto key, auto v) { c.difficulty = parse_number<int>(key, v); };
    k["difficulties"] = [](PipelineConfig& c, auto key, auto v) { c.difficulties = parse_list<int>(key, v); };
    return k;
  }();
  return table;
}

}  // namespace

PipelineConfig::PipelineConfig() {
  selection_train.batch_size = 64;
}

void PipelineConfig::set(std::string_view key, std::string_view value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw UsageError(fmt::format("unknown config key '{}'", key));
  it->second(*this, key, trim(value));
}

void PipelineConfig::validate() const {
  try {
    placement.validate();
    selection.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  if (placement.bands != bands || selection.bands != bands) {
    throw UsageError("placement and selection band counts must match 'bands'");
  }
  for (const TrainConfig* t : {&placement_train, &selection_train}) {
    if (t->batch_size == 0) throw UsageError("batch sizes must be positive");
    if (!(t->lr > 0.0)) throw UsageError("learning rates must be positive");
    if (!(t->plateau_factor > 0.0 && t->plateau_factor <= 1.0)) {
      throw UsageError("plateau_factor must be in (0, 1]");
    }
  }
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("threshold must be in [0, 1]");
  if (temperature < 0.0) throw UsageError("temperature must be non-negative");
  if (difficulty != 0 && difficulty < 5) {
    throw UsageError(fmt::format("difficulty {} leaves no room for five charts (minimum 5)", difficulty));
  }
  if (!difficulties.empty()) {
    if (difficulties.size() != 5) {
      throw UsageError(fmt::format("difficulties needs exactly 5 values, got {}", difficulties.size()));
    }
    for (int d : difficulties) {
      if (d < 1) throw UsageError("difficulty overrides must be at least 1");
    }
  }
}

std::string PipelineConfig::placement_path() const {
  return placement_checkpoint.empty()
             ? (std::filesystem::path(out_dir) / "placement.ddcl").string()
             : placement_checkpoint;
}

std::string PipelineConfig::selection_path() const {
  return selection_checkpoint.empty()
             ? (std::filesystem::path(out_dir) / "selection.ddcl").string()
             : selection_checkpoint;
}

PipelineConfig parse_config(std::string_view text, PipelineConfig base) {
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(fmt::format("config line {}: expected 'key = value'", line_no));
    }
    try {
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(fmt::format("config line {}: {}", line_no, e.what()));
    }
  }
  return base;
}

PipelineConfig load_config(const std::string& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot open config file '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const UsageError& e) {
    throw UsageError(fmt::format("{}: {}", path, e.what()));
  }
}

}  // namespace stepsmith
