#include "stepsmith/models.hpp"

#include <bit>
#include <cmath>

#include <fmt/format.h>

#include "stepsmith/error.hpp"

namespace stepsmith {

namespace {

constexpr float kPlacementKind = 1.0f;
constexpr float kSelectionKind = 2.0f;
constexpr std::string_view kWeightPrefix = "weights/";

void require(bool ok, const std::string& what) {
  if (!ok) throw DataError(what);
}

void require_rate(double rate, const char* name) {
  require(rate >= 0.0 && rate < 1.0, fmt::format("{} must be in [0, 1), got {}", name, rate));
}

void push_list(std::vector<double>& out, const std::vector<std::size_t>& xs) {
  out.push_back(static_cast<double>(xs.size()));
  for (std::size_t x : xs) out.push_back(static_cast<double>(x));
}

class ValueReader {
 public:
  explicit ValueReader(const std::vector<double>& v) : v_(v) {}
  double real() {
    require(pos_ < v_.size(), "model config record is truncated");
    return v_[pos_++];
  }
  std::size_t count() {
    const double x = real();
    require(x >= 0.0 && x == std::floor(x) && x < 1e9, "model config record is corrupt");
    return static_cast<std::size_t>(x);
  }
  std::vector<std::size_t> list() {
    const std::size_t n = count();
    require(n <= 64, "model config record is corrupt");
    std::vector<std::size_t> out(n);
    for (auto& x : out) x = count();
    return out;
  }
  void finish() const { require(pos_ == v_.size(), "model config record has trailing values"); }

 private:
  const std::vector<double>& v_;
  std::size_t pos_ = 0;
};

// Doubles travel through float32 tensors as four exact 16-bit chunks.
nn::Tensor<float> pack_doubles(const std::vector<double>& values) {
  nn::Tensor<float> t({values.size(), 4});
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (std::size_t k = 0; k < 4; ++k) {
      t[i * 4 + k] = static_cast<float>((bits >> (16 * k)) & 0xFFFFU);
    }
  }
  return t;
}

std::vector<double> unpack_doubles(const nn::Tensor<float>& t) {
  require(t.rank() == 2 && t.dim(1) == 4, "model config tensor has the wrong shape");
  std::vector<double> out(t.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const float c = t[i * 4 + k];
      require(c >= 0.0f && c <= 65535.0f && c == std::floor(c), "model config tensor is corrupt");
      bits |= static_cast<std::uint64_t>(c) << (16 * k);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

nn::Tensor<float> pack_hash(std::uint32_t h) {
  return nn::Tensor<float>({2}, {static_cast<float>(h & 0xFFFFU), static_cast<float>(h >> 16)});
}

template <class Config>
nn::NamedTensors bundle_tensors(const ModelBundle<Config>& bundle, float kind) {
  nn::NamedTensors out;
  auto insert = [&out](std::string name, nn::Tensor<float> t) {
    if (!out.emplace(std::move(name), std::move(t)).second) {
      throw DataError("tensor name collision while assembling checkpoint");
    }
  };
  const std::vector<double> values = config_values(bundle.config);
  insert("model.kind", nn::Tensor<float>({1}, kind));
  insert("config.values", pack_doubles(values));
  insert("config.hash", pack_hash(config_hash(values)));
  const std::size_t cells = bundle.stats.mean.size();
  require(cells == bundle.stats.std.size() && cells == bundle.stats.bands * kStftChannels,
          "normalization stats are inconsistent");
  nn::Tensor<float> mean({bundle.stats.bands, static_cast<std::size_t>(kStftChannels)});
  nn::Tensor<float> stdev({bundle.stats.bands, static_cast<std::size_t>(kStftChannels)});
  for (std::size_t i = 0; i < cells; ++i) {
    mean[i] = static_cast<float>(bundle.stats.mean[i]);
    stdev[i] = static_cast<float>(bundle.stats.std[i]);
  }
  insert("norm.mean", std::move(mean));
  insert("norm.std", std::move(stdev));
  for (const auto& [name, t] : bundle.weights) insert(std::string(kWeightPrefix) + name, t);
  return out;
}

const nn::Tensor<float>& find(const nn::NamedTensors& tensors, const std::string& name) {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError(fmt::format("checkpoint has no '{}' tensor", name));
  return it->second;
}

template <class Config, class FromValues>
ModelBundle<Config> bundle_from(const nn::NamedTensors& tensors, float kind, FromValues from) {
  const auto& k = find(tensors, "model.kind");
  if (k.size() != 1 || k[0] != kind) {
    throw DataError(kind == kPlacementKind ? "checkpoint is not a placement model"
                                           : "checkpoint is not a selection model");
  }
  ModelBundle<Config> b;
  const std::vector<double> values = unpack_doubles(find(tensors, "config.values"));
  const auto& h = find(tensors, "config.hash");
  if (h.size() != 2 || pack_hash(config_hash(values)) != h) {
    throw DataError("checkpoint config hash does not match its config record");
  }
  b.config = from(values);
  const auto& mean = find(tensors, "norm.mean");
  const auto& stdev = find(tensors, "norm.std");
  require(mean.rank() == 2 && mean.dim(1) == static_cast<std::size_t>(kStftChannels) &&
              stdev.shape() == mean.shape(),
          "checkpoint normalization stats have the wrong shape");
  b.stats.bands = mean.dim(0);
  b.stats.mean.assign(mean.storage().begin(), mean.storage().end());
  b.stats.std.assign(stdev.storage().begin(), stdev.storage().end());
  for (double s : b.stats.std) require(s > 0.0, "checkpoint normalization std must be positive");
  for (const auto& [name, t] : tensors) {
    if (name.rfind(kWeightPrefix, 0) == 0) b.weights.emplace(name.substr(kWeightPrefix.size()), t);
  }
  return b;
}

}  // namespace

std::size_t PlacementConfig::pooled_bands() const {
  std::size_t f = bands;
  for (std::size_t l = 0; l < conv_units.size(); ++l) {
    if (f < pool_width) return 0;
    f = (f - pool_width) / pool_stride + 1;
  }
  return f;
}

void PlacementConfig::validate() const {
  require(context >= 1, "placement context must be at least 1 beat");
  require(samples >= 1, "placement samples per beat must be at least 1");
  require(!conv_units.empty() && lstm_layers >= 1 && lstm_units >= 1,
          "placement model needs at least one ConvLSTM and one LSTM layer");
  for (std::size_t u : conv_units) require(u >= 1, "ConvLSTM unit counts must be positive");
  for (std::size_t u : dense_units) require(u >= 1, "dense unit counts must be positive");
  require(pool_width >= 1 && pool_stride >= 1, "pool width and stride must be positive");
  require(pooled_bands() >= 1,
          fmt::format("{} mel bands collapse to nothing after {} poolings of width {}", bands,
                      conv_units.size(), pool_width));
  require_rate(lstm_dropout, "lstm_dropout");
  require_rate(dense_dropout, "dense_dropout");
}

PlacementConfig PlacementConfig::toy() {
  PlacementConfig c;
  c.context = 2;
  c.samples = 8;
  c.bands = 8;
  c.conv_units = {4, 8};
  c.pool_width = 2;
  c.pool_stride = 2;
  c.lstm_units = 16;
  c.dense_units = {32, 16};
  return c;
}

void SelectionConfig::validate() const {
  require(history >= 1, "selection history must be at least 1");
  require(lstm_layers >= 1 && lstm_units >= 1, "selection model needs an LSTM layer");
  require(audio_context >= 1 && patch_frames >= 1, "selection audio context must be positive");
  require(!conv_units.empty(), "selection model needs at least one ConvLSTM layer");
  for (std::size_t u : conv_units) require(u >= 1, "ConvLSTM unit counts must be positive");
  for (std::size_t u : dense_units) require(u >= 1, "dense unit counts must be positive");
  require_rate(dense_dropout, "dense_dropout");
}

SelectionConfig SelectionConfig::toy() {
  SelectionConfig c;
  c.history = 16;
  c.lstm_units = 32;
  c.audio_context = 2;
  c.patch_frames = 3;
  c.bands = 8;
  c.conv_units = {2, 4};
  c.dense_units = {64, 64};
  return c;
}

std::vector<double> config_values(const PlacementConfig& c) {
  std::vector<double> v{static_cast<double>(c.context), static_cast<double>(c.samples),
                        static_cast<double>(c.bands)};
  push_list(v, c.conv_units);
  v.insert(v.end(), {static_cast<double>(c.pool_width), static_cast<double>(c.pool_stride),
                     static_cast<double>(c.lstm_units), static_cast<double>(c.lstm_layers)});
  push_list(v, c.dense_units);
  v.insert(v.end(), {c.lstm_dropout, c.dense_dropout, c.aux_bpm_scale, c.aux_difficulty_scale});
  return v;
}

std::vector<double> config_values(const SelectionConfig& c) {
  std::vector<double> v{static_cast<double>(c.history), static_cast<double>(c.lstm_units),
                        static_cast<double>(c.lstm_layers), static_cast<double>(c.audio_context),
                        static_cast<double>(c.patch_frames), static_cast<double>(c.bands)};
  push_list(v, c.conv_units);
  push_list(v, c.dense_units);
  v.push_back(c.dense_dropout);
  v.push_back(c.use_audio ? 1.0 : 0.0);
  return v;
}

PlacementConfig placement_config_from_values(const std::vector<double>& values) {
  ValueReader r(values);
  PlacementConfig c;
  c.context = r.count();
  c.samples = r.count();
  c.bands = r.count();
  c.conv_units = r.list();
  c.pool_width = r.count();
  c.pool_stride = r.count();
  c.lstm_units = r.count();
  c.lstm_layers = r.count();
  c.dense_units = r.list();
  c.lstm_dropout = r.real();
  c.dense_dropout = r.real();
  c.aux_bpm_scale = r.real();
  c.aux_difficulty_scale = r.real();
  r.finish();
  c.validate();
  return c;
}

SelectionConfig selection_config_from_values(const std::vector<double>& values) {
  ValueReader r(values);
  SelectionConfig c;
  c.history = r.count();
  c.lstm_units = r.count();
  c.lstm_layers = r.count();
  c.audio_context = r.count();
  c.patch_frames = r.count();
  c.bands = r.count();
  c.conv_units = r.list();
  c.dense_units = r.list();
  c.dense_dropout = r.real();
  c.use_audio = r.real() != 0.0;
  r.finish();
  c.validate();
  return c;
}

std::uint32_t config_hash(const std::vector<double>& values) {
  std::uint32_t h = 2166136261U;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int k = 0; k < 8; ++k) {
      h ^= static_cast<std::uint32_t>((bits >> (8 * k)) & 0xFFU);
      h *= 16777619U;
    }
  }
  return h;
}

nn::NamedTensors to_tensors(const PlacementBundle& bundle) {
  return bundle_tensors(bundle, kPlacementKind);
}

nn::NamedTensors to_tensors(const SelectionBundle& bundle) {
  return bundle_tensors(bundle, kSelectionKind);
}

PlacementBundle placement_bundle_from(const nn::NamedTensors& tensors) {
  return bundle_from<PlacementConfig>(tensors, kPlacementKind, placement_config_from_values);
}

SelectionBundle selection_bundle_from(const nn::NamedTensors& tensors) {
  return bundle_from<SelectionConfig>(tensors, kSelectionKind, selection_config_from_values);
}

NormalizationStats round_to_float(const NormalizationStats& stats) {
  NormalizationStats out = stats;
  for (double& m : out.mean) m = static_cast<float>(m);
  for (double& s : out.std) s = static_cast<float>(s);
  return out;
}

}  // namespace stepsmith
