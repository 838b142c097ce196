#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stepsmith/beatgrid.hpp"
#include "stepsmith/models.hpp"
#include "stepsmith/neural/optim.hpp"

namespace stepsmith {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  std::size_t batches_per_epoch = 400;
  std::size_t max_epochs = 1000;
  double lr = 1e-3;
  std::size_t warmup = 100;
  std::size_t patience = 20;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 5;
  // 0 evaluates every validation example.
  std::size_t max_valid_examples = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
  double valid_metric = 0.0;  // PR-AUC for placement, accuracy for selection
  double lr = 0.0;
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool early_stopped = false;

  // CSV: epoch, train_loss, valid_loss, <metric_column>, lr.
  std::string csv(const std::string& metric_column) const;
};

// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

// Single-example-at-a-time minibatch training: per-example gradients are accumulated
// with weight 1/B, then one Adam step is taken.
class PlacementTrainer {
 public:
  PlacementTrainer(PlacementModel<float>& model, double lr, std::uint64_t seed);

  // Mean training-mode BCE over the batch, before the update.
  double step(const PlacementDataset& data, const std::vector<std::size_t>& batch);
  void set_lr(double lr) { adam_.lr = lr; }
  double lr() const { return adam_.lr; }
  std::size_t steps() const { return adam_.step; }

 private:
  PlacementModel<float>& model_;
  nn::AdamState<float> adam_;
  Rng rng_;
};

class SelectionTrainer {
 public:
  SelectionTrainer(SelectionModel<float>& model, double lr, std::uint64_t seed);

  double step(const SelectionDataset& data, const std::vector<std::size_t>& batch);
  // For in-memory examples (tests, small fixtures).
  double step(const std::vector<SelectionExample>& examples, const std::vector<std::size_t>& batch);
  void set_lr(double lr) { adam_.lr = lr; }
  double lr() const { return adam_.lr; }
  std::size_t steps() const { return adam_.step; }

 private:
  template <class Get>
  double step_impl(Get get, const std::vector<std::size_t>& batch);

  SelectionModel<float>& model_;
  nn::AdamState<float> adam_;
  Rng rng_;
};

// Per-beat probabilities in eval mode.
std::vector<std::array<float, kSlotsPerBeat>> placement_probabilities(
    const PlacementModel<float>& model, const PlacementDataset& data, std::size_t first,
    std::size_t count);

struct PlacementValidation {
  double loss = 0.0;
  double prauc = 0.0;  // 0 when the subset has no positive slots
};

PlacementValidation validate_placement(const PlacementModel<float>& model,
                                       const PlacementDataset& data, std::size_t max_examples = 0);

struct SelectionValidation {
  double loss = 0.0;
  double accuracy = 0.0;
};

SelectionValidation validate_selection(const SelectionModel<float>& model,
                                       const SelectionDataset& data, std::size_t max_examples = 0);

// Full regimen: BCE + Adam, plateau schedule on validation loss, early stop on
// validation PR-AUC, best weights restored into `model`.
TrainingReport train_placement(PlacementModel<float>& model, const PlacementDataset& train,
                               const PlacementDataset& valid, const TrainConfig& config,
                               const EpochCallback& on_epoch = {});

// Same regimen with softmax cross-entropy; early stop on validation loss.
TrainingReport train_selection(SelectionModel<float>& model, const SelectionDataset& train,
                               const SelectionDataset& valid, const TrainConfig& config,
                               const EpochCallback& on_epoch = {});

}  // namespace stepsmith
