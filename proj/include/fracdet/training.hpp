#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "fracdet/data.hpp"
#include "fracdet/model.hpp"

namespace fracdet {

// Defaults are the published training settings.
struct TrainConfig {
  float learning_rate = 0.0005f;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 40;
  std::size_t patience = 10;
  // Validation loss must drop by at least this much to count as improvement.
  double min_delta = 1e-6;
  std::uint64_t seed = 1;
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based, 0 when no epoch ran
  bool stopped_early = false;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean cross-entropy and argmax accuracy; never mutates the model.
Evaluation evaluate(const Model& model, std::span<const TensorSample> data);

// Class-0 probability per sample, the score used for ROC analysis.
std::vector<double> positive_scores(const Model& model, std::span<const TensorSample> data);

struct SampleScores {
  std::vector<double> positive;         // class-0 probability
  std::vector<std::size_t> predicted;  // argmax, ties to class 0
};
SampleScores score_samples(const Model& model, std::span<const TensorSample> data);

struct TrainHooks {
  // Replaces the validation pass; receives the model after `epoch` finished.
  std::function<Evaluation(const Model& model, std::size_t epoch)> validate;
  std::function<void(const Model& model, const EpochRecord& record)> on_epoch_end;
};

// Adam on per-batch mean cross-entropy with shuffled batches. Validation loss
// is monitored after every epoch; training stops once it has failed to
// improve for `patience` consecutive epochs. On return the model holds the
// best-epoch parameters. Throws kDiverged on a non-finite loss.
TrainingHistory train(Model& model, std::span<const TensorSample> train_set, std::span<const TensorSample> val_set,
                      const TrainConfig& cfg, const TrainHooks& hooks = {});

// epoch,train_loss,train_acc,val_loss,val_acc
void write_history_csv(const TrainingHistory& history, const std::filesystem::path& path);

}  // namespace fracdet
