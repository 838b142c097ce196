#include "stepsmith/training.hpp"

#include <cmath>

#include <fmt/format.h>

#include "stepsmith/error.hpp"
#include "stepsmith/evalmetrics.hpp"

namespace stepsmith {

namespace {

void check_finite(double loss, const char* what, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError(fmt::format("{} loss became non-finite ({}) at optimizer step {}", what,
                                   loss, step));
  }
}

std::size_t subset_size(std::size_t n, std::size_t cap) { return cap == 0 ? n : std::min(n, cap); }

nn::Tensor<float> target_tensor(const PlacementExample& ex) {
  return nn::Tensor<float>({kSlotsPerBeat}, std::vector<float>(ex.target.begin(), ex.target.end()));
}

// Shared epoch loop. `run_epoch` trains one epoch and returns the mean train loss;
// `validate` returns (valid_loss, valid_metric).
template <class Params, class RunEpoch, class Validate>
TrainingReport run_regimen(Params& params, const TrainConfig& config, nn::Monitor monitor,
                           RunEpoch run_epoch, Validate validate, const EpochCallback& on_epoch,
                           const std::function<void(double)>& set_lr) {
  TrainingReport report;
  std::vector<double> valid_losses;
  std::vector<double> monitored;
  auto best = params.snapshot();
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const double lr =
        config.lr * nn::reduce_on_plateau(valid_losses, nn::Monitor::Minimize,
                                          config.plateau_factor, config.plateau_patience);
    set_lr(lr);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = run_epoch();
    const auto [vloss, vmetric] = validate();
    rec.valid_loss = vloss;
    rec.valid_metric = vmetric;
    report.epochs.push_back(rec);
    valid_losses.push_back(vloss);
    monitored.push_back(monitor == nn::Monitor::Maximize ? vmetric : vloss);
    const auto decision = nn::early_stop(monitored, monitor, config.warmup, config.patience);
    if (decision.best_epoch == epoch) best = params.snapshot();
    report.best_epoch = decision.best_epoch;
    const bool keep_going = !on_epoch || on_epoch(rec);
    if (decision.stop) {
      report.early_stopped = true;
      break;
    }
    if (!keep_going) break;
  }
  params.restore(best);
  return report;
}

}  // namespace

std::string TrainingReport::csv(const std::string& metric_column) const {
  std::string out = fmt::format("epoch,train_loss,valid_loss,{},lr\n", metric_column);
  for (const EpochRecord& e : epochs) {
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", e.epoch, e.train_loss, e.valid_loss,
                       e.valid_metric, e.lr);
  }
  return out;
}

PlacementTrainer::PlacementTrainer(PlacementModel<float>& model, double lr, std::uint64_t seed)
    : model_(model), rng_(seed) {
  adam_.lr = lr;
}

double PlacementTrainer::step(const PlacementDataset& data, const std::vector<std::size_t>& batch) {
  if (batch.empty()) throw DataError("empty training batch");
  auto& params = model_.params();
  params.zero_grad();
  const float weight = 1.0f / static_cast<float>(batch.size());
  double total = 0.0;
  for (std::size_t i : batch) {
    const PlacementExample ex = data.example(i);
    auto loss = nn::bce_loss(model_.forward(ex, true, rng_), target_tensor(ex));
    total += loss->value[0];
    check_finite(loss->value[0], "placement", adam_.step + 1);
    nn::backward(nn::scale(loss, weight));
  }
  nn::adam_step(adam_, params);
  return total / static_cast<double>(batch.size());
}

SelectionTrainer::SelectionTrainer(SelectionModel<float>& model, double lr, std::uint64_t seed)
    : model_(model), rng_(seed) {
  adam_.lr = lr;
}

template <class Get>
double SelectionTrainer::step_impl(Get get, const std::vector<std::size_t>& batch) {
  if (batch.empty()) throw DataError("empty training batch");
  auto& params = model_.params();
  params.zero_grad();
  const float weight = 1.0f / static_cast<float>(batch.size());
  double total = 0.0;
  for (std::size_t i : batch) {
    const SelectionExample ex = get(i);
    auto loss = nn::softmax_ce_loss(model_.logits(ex, true, rng_),
                                    static_cast<std::size_t>(ex.target));
    total += loss->value[0];
    check_finite(loss->value[0], "selection", adam_.step + 1);
    nn::backward(nn::scale(loss, weight));
  }
  nn::adam_step(adam_, params);
  return total / static_cast<double>(batch.size());
}

double SelectionTrainer::step(const SelectionDataset& data, const std::vector<std::size_t>& batch) {
  return step_impl([&](std::size_t i) { return data.example(i); }, batch);
}

double SelectionTrainer::step(const std::vector<SelectionExample>& examples,
                              const std::vector<std::size_t>& batch) {
  return step_impl([&](std::size_t i) { return examples.at(i); }, batch);
}

std::vector<std::array<float, kSlotsPerBeat>> placement_probabilities(
    const PlacementModel<float>& model, const PlacementDataset& data, std::size_t first,
    std::size_t count) {
  nn::NoGradGuard guard;
  Rng unused(0);
  std::vector<std::array<float, kSlotsPerBeat>> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto p = model.forward(data.example(first + k), false, unused);
    std::copy(p->value.data(), p->value.data() + kSlotsPerBeat, out[k].begin());
  }
  return out;
}

PlacementValidation validate_placement(const PlacementModel<float>& model,
                                       const PlacementDataset& data, std::size_t max_examples) {
  const std::size_t n = subset_size(data.size(), max_examples);
  PlacementValidation v;
  if (n == 0) return v;
  const auto probs = placement_probabilities(model, data, 0, n);
  std::vector<double> p;
  std::vector<int> t;
  p.reserve(n * kSlotsPerBeat);
  t.reserve(n * kSlotsPerBeat);
  for (std::size_t k = 0; k < n; ++k) {
    const PlacementExample ex = data.example(k);
    for (std::size_t s = 0; s < kSlotsPerBeat; ++s) {
      p.push_back(probs[k][s]);
      t.push_back(ex.target[s] != 0.0f);
    }
  }
  const PlacementEval e = evaluate_placement(p, t);
  v.loss = e.loss;
  v.prauc = e.prauc.value_or(0.0);
  return v;
}

SelectionValidation validate_selection(const SelectionModel<float>& model,
                                       const SelectionDataset& data, std::size_t max_examples) {
  const std::size_t n = subset_size(data.size(), max_examples);
  SelectionValidation v;
  if (n == 0) return v;
  nn::NoGradGuard guard;
  Rng unused(0);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const SelectionExample ex = data.example(k);
    const auto logits = model.logits(ex, false, unused);
    loss += nn::softmax_ce_loss(logits, static_cast<std::size_t>(ex.target))->value[0];
    const auto& z = logits->value.storage();
    const auto arg = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    correct += arg == ex.target;
  }
  v.loss = loss / static_cast<double>(n);
  v.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return v;
}

TrainingReport train_placement(PlacementModel<float>& model, const PlacementDataset& train,
                               const PlacementDataset& valid, const TrainConfig& config,
                               const EpochCallback& on_epoch) {
  PlacementTrainer trainer(model, config.lr, config.seed + 2);
  BatchSampler sampler(train.size(), config.batch_size, config.seed + 1);
  auto run_epoch = [&] {
    double total = 0.0;
    for (std::size_t b = 0; b < config.batches_per_epoch; ++b) total += trainer.step(train, sampler.next());
    return total / static_cast<double>(std::max<std::size_t>(config.batches_per_epoch, 1));
  };
  auto validate = [&] {
    const PlacementValidation v = validate_placement(model, valid, config.max_valid_examples);
    return std::pair{v.loss, v.prauc};
  };
  return run_regimen(model.params(), config, nn::Monitor::Maximize, run_epoch, validate, on_epoch,
                     [&](double lr) { trainer.set_lr(lr); });
}

TrainingReport train_selection(SelectionModel<float>& model, const SelectionDataset& train,
                               const SelectionDataset& valid, const TrainConfig& config,
                               const EpochCallback& on_epoch) {
  SelectionTrainer trainer(model, config.lr, config.seed + 2);
  BatchSampler sampler(train.size(), config.batch_size, config.seed + 1);
  auto run_epoch = [&] {
    double total = 0.0;
    for (std::size_t b = 0; b < config.batches_per_epoch; ++b) total += trainer.step(train, sampler.next());
    return total / static_cast<double>(std::max<std::size_t>(config.batches_per_epoch, 1));
  };
  auto validate = [&] {
    const SelectionValidation v = validate_selection(model, valid, config.max_valid_examples);
    return std::pair{v.loss, v.accuracy};
  };
  return run_regimen(model.params(), config, nn::Monitor::Minimize, run_epoch, validate, on_epoch,
                     [&](double lr) { trainer.set_lr(lr); });
}

}  // namespace stepsmith
