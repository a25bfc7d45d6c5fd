#include "fracdet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "fracdet/error.hpp"
#include "fracdet/layers.hpp"

namespace fracdet {

namespace {

// Batches are cut into this many contiguous chunks whose gradients are summed
// in chunk order, so results do not depend on the worker count.
constexpr std::size_t kChunks = 4;

std::size_t worker_count() {
  const unsigned hw = std::thread::hardware_concurrency();
  return std::clamp<std::size_t>(hw == 0 ? 1 : hw, 1, kChunks);
}

template <typename Fn>
void run_chunks(std::size_t chunks, Fn fn) {
  const std::size_t workers = std::min(worker_count(), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) fn(c);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < chunks; c += workers) fn(c);
    });
  }
}

void check_inputs(const Model& model, std::span<const TensorSample> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].input.shape() != model.spec().input) {
      throw_invalid("sample " + std::to_string(i) + " has shape " + shape_string(data[i].input.shape()) +
                    ", model expects " + shape_string(model.spec().input));
    }
    if (data[i].label >= kNumClasses) throw_invalid("sample " + std::to_string(i) + " has an out-of-range label");
  }
}

struct ChunkResult {
  std::vector<Tensor> grads;
  double loss = 0.0;
  std::size_t correct = 0;
  std::exception_ptr error;
};

}  // namespace

void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0f)) throw_invalid("learning rate must be positive");
  if (cfg.batch_size == 0) throw_invalid("batch size must be positive");
  if (cfg.patience == 0) throw_invalid("patience must be positive");
  if (cfg.max_epochs > 0 && cfg.patience > cfg.max_epochs) throw_invalid("patience cannot exceed max epochs");
}

Evaluation evaluate(const Model& model, std::span<const TensorSample> data) {
  if (data.empty()) throw_invalid("cannot evaluate on an empty dataset");
  check_inputs(model, data);
  std::vector<double> losses(data.size());
  std::vector<char> correct(data.size());
  const std::size_t per = (data.size() + kChunks - 1) / kChunks;
  run_chunks(kChunks, [&](std::size_t c) {
    for (std::size_t i = c * per; i < std::min(data.size(), (c + 1) * per); ++i) {
      const ForwardTrace t = forward_trace(model, data[i].input);
      losses[i] = nn::softmax_ce_forward(t.logits(), data[i].label).loss;
      correct[i] = predicted_class(t.probabilities()) == data[i].label;
    }
  });
  Evaluation e;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    e.loss += losses[i];
    hits += correct[i];
  }
  e.loss /= static_cast<double>(data.size());
  e.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  return e;
}

SampleScores score_samples(const Model& model, std::span<const TensorSample> data) {
  check_inputs(model, data);
  SampleScores out;
  out.positive.resize(data.size());
  out.predicted.resize(data.size());
  const std::size_t per = (data.size() + kChunks - 1) / kChunks;
  run_chunks(kChunks, [&](std::size_t c) {
    for (std::size_t i = c * per; i < std::min(data.size(), (c + 1) * per); ++i) {
      const Tensor p = forward(model, data[i].input).probabilities;
      out.positive[i] = p[0];
      out.predicted[i] = predicted_class(p);
    }
  });
  return out;
}

std::vector<double> positive_scores(const Model& model, std::span<const TensorSample> data) {
  return score_samples(model, data).positive;
}

TrainingHistory train(Model& model, std::span<const TensorSample> train_set, std::span<const TensorSample> val_set,
                      const TrainConfig& cfg, const TrainHooks& hooks) {
  validate(cfg);
  TrainingHistory history;
  if (cfg.max_epochs == 0) return history;
  if (train_set.empty()) throw_invalid("training set is empty");
  if (val_set.empty() && !hooks.validate) throw_invalid("validation set is empty");
  check_inputs(model, train_set);
  check_inputs(model, val_set);

  auto& params = model.mutable_params().tensors;
  nn::Adam adam({.learning_rate = cfg.learning_rate}, params);
  double best_loss = std::numeric_limits<double>::infinity();
  ModelParams best = model.params();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t correct = 0;
    const auto order = batches(train_set.size(), cfg.batch_size, cfg.seed, epoch);
    for (std::size_t b = 0; b < order.size(); ++b) {
      const auto& batch = order[b];
      std::vector<ChunkResult> parts(kChunks);
      const std::size_t per = (batch.size() + kChunks - 1) / kChunks;
      run_chunks(kChunks, [&](std::size_t c) {
        ChunkResult& r = parts[c];
        r.grads = zero_like(model.params());
        try {
          for (std::size_t k = c * per; k < std::min(batch.size(), (c + 1) * per); ++k) {
            const TensorSample& s = train_set[batch[k]];
            const SampleLoss sl = loss_and_gradients(model, s.input, s.label, r.grads);
            r.loss += sl.loss;
            r.correct += predicted_class(sl.probabilities) == s.label;
          }
        } catch (...) {
          r.error = std::current_exception();
        }
      });
      std::vector<Tensor>& grads = parts[0].grads;
      double batch_loss = 0.0;
      for (std::size_t c = 0; c < kChunks; ++c) {
        if (parts[c].error) std::rethrow_exception(parts[c].error);
        batch_loss += parts[c].loss;
        correct += parts[c].correct;
        if (c == 0) continue;
        for (std::size_t k = 0; k < grads.size(); ++k) {
          float* dst = grads[k].data();
          const float* src = parts[c].grads[k].data();
          for (std::size_t i = 0; i < grads[k].size(); ++i) dst[i] += src[i];
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::kDiverged, "diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                              std::to_string(b + 1));
      }
      const float scale = 1.0f / static_cast<float>(batch.size());
      for (auto& g : grads) {
        for (auto& v : g.values()) v *= scale;
      }
      adam.step(params, grads);
      loss_sum += batch_loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    const Evaluation v = hooks.validate ? hooks.validate(model, epoch) : evaluate(model, val_set);
    rec.val_loss = v.loss;
    rec.val_accuracy = v.accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(rec);
    if (hooks.on_epoch_end) hooks.on_epoch_end(model, rec);

    if (v.loss < best_loss - cfg.min_delta) {
      best_loss = v.loss;
      history.best_epoch = epoch;
      best = model.params();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      history.stopped_early = true;
      break;
    }
  }
  if (history.best_epoch > 0) model.mutable_params() = std::move(best);
  return history;
}

void write_history_csv(const TrainingHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[256];
  for (const auto& e : history.epochs) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.train_accuracy, e.val_loss,
                  e.val_accuracy);
    out << line;
  }
}

}  // namespace fracdet
