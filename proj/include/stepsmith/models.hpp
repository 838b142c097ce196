#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stepsmith/audiofeat.hpp"
#include "stepsmith/beatgrid.hpp"
#include "stepsmith/neural/checkpoint.hpp"
#include "stepsmith/neural/layers.hpp"
#include "stepsmith/random.hpp"

namespace stepsmith {

struct PlacementConfig {
  std::size_t context = kPlacementContext;
  std::size_t samples = kSamplesPerBeat;
  std::size_t bands = kDefaultMelBands;
  std::vector<std::size_t> conv_units{16, 32};
  std::size_t pool_width = 3;
  std::size_t pool_stride = 3;
  std::size_t lstm_units = 128;
  std::size_t lstm_layers = 2;
  std::vector<std::size_t> dense_units{512, 256};
  double lstm_dropout = 0.2;
  double dense_dropout = 0.5;
  // Fixed input scaling of the (bpm, difficulty) aux pair.
  double aux_bpm_scale = 0.01;
  double aux_difficulty_scale = 0.1;

  // Frequency bins left after the conv stack.
  std::size_t pooled_bands() const;
  std::size_t flat_features() const { return samples * pooled_bands() * conv_units.back(); }
  void validate() const;
  // Small dimensions used by tests and the toy pipeline: 2-beat context, 8 bands.
  static PlacementConfig toy();

  friend bool operator==(const PlacementConfig&, const PlacementConfig&) = default;
};

struct SelectionConfig {
  std::size_t history = kSelectionHistory;
  std::size_t lstm_units = 256;
  std::size_t lstm_layers = 2;
  std::size_t audio_context = kSelectionAudioContext;
  std::size_t patch_frames = kSelectionPatchFrames;
  std::size_t bands = kDefaultMelBands;
  std::vector<std::size_t> conv_units{8, 16};
  std::vector<std::size_t> dense_units{512, 256};
  double dense_dropout = 0.5;
  bool use_audio = true;

  SelectionGeometry geometry() const { return {history, audio_context, patch_frames}; }
  std::size_t audio_features() const { return patch_frames * bands * conv_units.back(); }
  void validate() const;
  static SelectionConfig toy();

  friend bool operator==(const SelectionConfig&, const SelectionConfig&) = default;
};

// Flat numeric encodings used for checkpoint compatibility checks.
std::vector<double> config_values(const PlacementConfig& config);
std::vector<double> config_values(const SelectionConfig& config);
PlacementConfig placement_config_from_values(const std::vector<double>& values);
SelectionConfig selection_config_from_values(const std::vector<double>& values);
// FNV-1a over the encoded values.
std::uint32_t config_hash(const std::vector<double>& values);

namespace detail {
template <class T>
nn::Var<T> input(const float* data, nn::Shape shape) {
  const std::size_t n = nn::shape_size(shape);
  return nn::constant<T>(nn::Tensor<T>(std::move(shape), std::vector<T>(data, data + n)));
}

// A ConvLSTM stack over a sequence of (H, F, C) frames with optional frequency pooling
// after each layer; returns the per-timestep outputs of the last layer.
template <class T>
struct ConvEncoder {
  std::vector<nn::ConvLstmLayer<T>> layers;
  std::size_t pool_width = 0;  // 0: no pooling
  std::size_t pool_stride = 0;

  ConvEncoder() = default;
  ConvEncoder(nn::ParameterSet<T>& params, const std::string& name, std::size_t in,
              const std::vector<std::size_t>& units, std::size_t pool_w, std::size_t pool_s,
              Rng& rng)
      : pool_width(pool_w), pool_stride(pool_s) {
    std::size_t c = in;
    for (std::size_t l = 0; l < units.size(); ++l) {
      layers.emplace_back(params, name + ".convlstm" + std::to_string(l), c, units[l], rng);
      c = units[l];
    }
  }

  std::vector<nn::Var<T>> forward(std::vector<nn::Var<T>> xs) const {
    for (const auto& layer : layers) {
      xs = layer.forward(xs);
      if (pool_width > 0) {
        for (auto& x : xs) x = nn::maxpool_freq(x, pool_width, pool_stride);
      }
    }
    return xs;
  }
};

// Two dense layers with leaky ReLU and dropout, then the output projection.
template <class T>
struct Head {
  std::vector<nn::Dense<T>> hidden;
  nn::Dense<T> out;
  double dropout = 0.0;

  Head() = default;
  Head(nn::ParameterSet<T>& params, std::size_t in, const std::vector<std::size_t>& units,
       std::size_t outputs, double dropout_rate, Rng& rng)
      : dropout(dropout_rate) {
    std::size_t c = in;
    for (std::size_t l = 0; l < units.size(); ++l) {
      hidden.emplace_back(params, "head.dense" + std::to_string(l), c, units[l], rng);
      c = units[l];
    }
    out = nn::Dense<T>(params, "head.out", c, outputs, rng, nn::Init::Zero);
  }

  nn::Var<T> forward(nn::Var<T> x, bool training, Rng& rng) const {
    for (const auto& layer : hidden) {
      x = nn::dropout(nn::leaky_relu(layer(x)), dropout, training, rng);
    }
    return out(x);
  }
};
}  // namespace detail

// Branched ConvLSTM placement network. Each branch encodes its context beats with
// ConvLSTM + pooling, appends the scaled aux pair, and runs a stacked LSTM; the future
// branch reads its beats from the far end toward the current beat. The final hidden
// states of both branches feed a dense head with 48 sigmoid outputs.
template <class T>
class PlacementModel {
 public:
  explicit PlacementModel(PlacementConfig config, std::uint64_t seed = 0)
      : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    for (int b = 0; b < 2; ++b) {
      const std::string name = b == 0 ? "past" : "future";
      Branch& br = branches_[b];
      br.encoder = detail::ConvEncoder<T>(params_, name, kStftChannels, config_.conv_units,
                                          config_.pool_width, config_.pool_stride, rng);
      std::size_t in = config_.flat_features() + 2;
      for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
        br.lstms.emplace_back(params_, name + ".lstm" + std::to_string(l), in, config_.lstm_units,
                              rng);
        in = config_.lstm_units;
      }
    }
    head_ = detail::Head<T>(params_, 2 * config_.lstm_units, config_.dense_units, kSlotsPerBeat,
                            config_.dense_dropout, rng);
  }

  const PlacementConfig& config() const { return config_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  // (48) probabilities.
  nn::Var<T> forward(const PlacementExample& ex, bool training, Rng& rng) const {
    check(ex);
    auto past = branch_forward(branches_[0], ex.past, ex.past_aux, false, training, rng);
    auto future = branch_forward(branches_[1], ex.future, ex.future_aux, true, training, rng);
    return nn::sigmoid(head_.forward(nn::concat<T>({past, future}), training, rng));
  }

 private:
  struct Branch {
    detail::ConvEncoder<T> encoder;
    std::vector<nn::LstmLayer<T>> lstms;
  };

  void check(const PlacementExample& ex) const {
    const std::size_t frame = config_.samples * config_.bands * kStftChannels;
    if (ex.context != config_.context || ex.samples != config_.samples ||
        ex.bands != config_.bands || ex.past.size() != config_.context * frame ||
        ex.future.size() != config_.context * frame ||
        ex.past_aux.size() != 2 * config_.context || ex.future_aux.size() != 2 * config_.context) {
      throw DataError(fmt::format(
          "placement example ({} beats, {} samples, {} bands) does not match model "
          "({} beats, {} samples, {} bands)",
          ex.context, ex.samples, ex.bands, config_.context, config_.samples, config_.bands));
    }
  }

  nn::Var<T> branch_forward(const Branch& br, const std::vector<float>& frames,
                            const std::vector<float>& aux, bool reversed, bool training,
                            Rng& rng) const {
    const std::size_t n = config_.context;
    const std::size_t frame = config_.samples * config_.bands * kStftChannels;
    std::vector<nn::Var<T>> xs;
    std::vector<std::size_t> order(n);
    for (std::size_t t = 0; t < n; ++t) order[t] = reversed ? n - 1 - t : t;
    for (std::size_t t : order) {
      xs.push_back(detail::input<T>(frames.data() + t * frame,
                                    {config_.samples, config_.bands, kStftChannels}));
    }
    auto encoded = br.encoder.forward(std::move(xs));
    std::vector<nn::Var<T>> seq;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t t = order[k];
      nn::Tensor<T> a({2});
      a[0] = static_cast<T>(aux[2 * t] * config_.aux_bpm_scale);
      a[1] = static_cast<T>(aux[2 * t + 1] * config_.aux_difficulty_scale);
      seq.push_back(nn::concat<T>({nn::reshape(encoded[k], {config_.flat_features()}),
                                   nn::constant<T>(std::move(a))}));
    }
    for (const auto& lstm : br.lstms) {
      seq = lstm.forward(seq);
      for (auto& h : seq) h = nn::dropout(h, config_.lstm_dropout, training, rng);
    }
    return seq.back();
  }

  PlacementConfig config_;
  nn::ParameterSet<T> params_;
  Branch branches_[2];
  detail::Head<T> head_;
};

// Autoregressive step-selection network: a stacked LSTM over (one-hot previous symbol,
// delta-beat pair) plus past/future ConvLSTM audio encoders, concatenated into a dense
// head with 256 logits.
template <class T>
class SelectionModel {
 public:
  explicit SelectionModel(SelectionConfig config, std::uint64_t seed = 0)
      : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    std::size_t in = kSymbolCount + 2;
    for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
      lstms_.emplace_back(params_, "symbols.lstm" + std::to_string(l), in, config_.lstm_units, rng);
      in = config_.lstm_units;
    }
    std::size_t head_in = config_.lstm_units;
    if (config_.use_audio) {
      past_ = detail::ConvEncoder<T>(params_, "audio_past", kStftChannels, config_.conv_units, 0,
                                     0, rng);
      future_ = detail::ConvEncoder<T>(params_, "audio_future", kStftChannels, config_.conv_units,
                                       0, 0, rng);
      head_in += 2 * config_.audio_features();
    }
    head_ = detail::Head<T>(params_, head_in, config_.dense_units, kSymbolCount,
                            config_.dense_dropout, rng);
  }

  const SelectionConfig& config() const { return config_; }
  nn::ParameterSet<T>& params() { return params_; }
  const nn::ParameterSet<T>& params() const { return params_; }

  // (256) logits.
  nn::Var<T> logits(const SelectionExample& ex, bool training, Rng& rng) const {
    check(ex);
    std::vector<nn::Var<T>> seq;
    seq.reserve(config_.history);
    for (std::size_t j = 0; j < config_.history; ++j) {
      nn::Tensor<T> x({kSymbolCount + 2}, T{0});
      x[static_cast<std::size_t>(ex.history_symbols[j])] = T{1};
      x[kSymbolCount] = static_cast<T>(ex.delta[2 * j]);
      x[kSymbolCount + 1] = static_cast<T>(ex.delta[2 * j + 1]);
      seq.push_back(nn::constant<T>(std::move(x)));
    }
    for (const auto& lstm : lstms_) seq = lstm.forward(seq);
    std::vector<nn::Var<T>> parts{seq.back()};
    if (config_.use_audio) {
      parts.push_back(audio_forward(past_, ex.audio_past, false));
      parts.push_back(audio_forward(future_, ex.audio_future, true));
    }
    return head_.forward(nn::concat<T>(parts), training, rng);
  }

  nn::Var<T> forward(const SelectionExample& ex, bool training, Rng& rng) const {
    return nn::softmax(logits(ex, training, rng));
  }

 private:
  void check(const SelectionExample& ex) const {
    const std::size_t patch = config_.patch_frames * config_.bands * kStftChannels;
    bool ok = ex.history == config_.history && ex.history_symbols.size() == config_.history &&
              ex.delta.size() == 2 * config_.history;
    for (int s : ex.history_symbols) ok = ok && s >= 0 && s < kSymbolCount;
    if (config_.use_audio) {
      ok = ok && ex.audio_context == config_.audio_context &&
           ex.patch_frames == config_.patch_frames && ex.bands == config_.bands &&
           ex.audio_past.size() == config_.audio_context * patch &&
           ex.audio_future.size() == config_.audio_context * patch;
    }
    if (!ok) {
      throw DataError(fmt::format(
          "selection example (history {}, context {}, patch {}, {} bands) does not match model "
          "(history {}, context {}, patch {}, {} bands)",
          ex.history, ex.audio_context, ex.patch_frames, ex.bands, config_.history,
          config_.audio_context, config_.patch_frames, config_.bands));
    }
  }

  nn::Var<T> audio_forward(const detail::ConvEncoder<T>& enc, const std::vector<float>& data,
                           bool reversed) const {
    const std::size_t n = config_.audio_context;
    const std::size_t patch = config_.patch_frames * config_.bands * kStftChannels;
    std::vector<nn::Var<T>> xs;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t t = reversed ? n - 1 - k : k;
      xs.push_back(detail::input<T>(data.data() + t * patch,
                                    {config_.patch_frames, config_.bands, kStftChannels}));
    }
    auto hs = enc.forward(std::move(xs));
    return nn::reshape(hs.back(), {config_.audio_features()});
  }

  SelectionConfig config_;
  nn::ParameterSet<T> params_;
  std::vector<nn::LstmLayer<T>> lstms_;
  detail::ConvEncoder<T> past_;
  detail::ConvEncoder<T> future_;
  detail::Head<T> head_;
};

// Everything needed to rebuild a trained model: weights, config and the normalization
// statistics its inputs were scaled with.
template <class Config>
struct ModelBundle {
  Config config;
  NormalizationStats stats;
  std::map<std::string, nn::Tensor<float>> weights;
};

using PlacementBundle = ModelBundle<PlacementConfig>;
using SelectionBundle = ModelBundle<SelectionConfig>;

nn::NamedTensors to_tensors(const PlacementBundle& bundle);
nn::NamedTensors to_tensors(const SelectionBundle& bundle);
PlacementBundle placement_bundle_from(const nn::NamedTensors& tensors);
SelectionBundle selection_bundle_from(const nn::NamedTensors& tensors);

// Stats as stored in a checkpoint (float32); training rounds through this so that
// generation sees exactly the statistics training used.
NormalizationStats round_to_float(const NormalizationStats& stats);

}  // namespace stepsmith
