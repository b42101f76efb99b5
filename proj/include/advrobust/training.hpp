#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advrobust/data.hpp"
#include "advrobust/models.hpp"

namespace advrobust {

enum class PhaseMode { kSingle, kTwoPhase };

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 10;
    std::size_t max_epochs = 40;    // single-phase budget
    std::size_t phase_epochs = 20;  // per-phase budget in two-phase mode
    std::size_t patience = 6;
    PhaseMode phase = PhaseMode::kSingle;
    double phase2_lr_divisor = 10.0;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
};

/// Throws std::invalid_argument naming the first violated constraint.
void validate(const TrainConfig& config);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params` using the
/// matching entry of `grads`. State is sized lazily on the first call.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state, double lr,
               const AdamOptions& options = {});

/// Validation-loss early stopping: stop once `patience` consecutive epochs
/// fail to improve strictly on the best loss seen.
class EarlyStopping {
  public:
    explicit EarlyStopping(std::size_t patience);
    /// Returns true when training should stop after this epoch.
    bool update(std::size_t epoch, double val_loss);
    bool improved() const noexcept { return improved_; }
    std::size_t best_epoch() const noexcept { return best_epoch_; }
    double best_loss() const noexcept { return best_loss_; }

  private:
    std::size_t patience_;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    double best_loss_;
    bool improved_ = false;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based, counted across phases
    int phase = 1;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double initial_val_loss = 0.0;
    std::size_t stopped_epoch = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    double wall_time_seconds = 0.0;
    std::size_t phase1_frozen_prefix = 0;

    /// epoch,train_loss,train_acc,val_loss,val_acc with 6 decimals.
    std::string to_csv() const;
};

struct TrainHooks {
    /// Replaces the measured validation loss (scripted early-stopping runs).
    std::function<double(std::size_t epoch, double measured)> val_loss_override;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains `model` on the variant's train split, early-stopping on the val
/// split and restoring the best-validation parameters. Leaves the model
/// frozen (no parameter requires grad).
TrainReport train(Model& model, const DatasetVariant& variant, const TrainConfig& config,
                  const TrainHooks& hooks = {});

/// Fraction of rows whose argmax (ties to the lower index) equals the label.
double evaluate_accuracy(const Model& model, const Tensor& images, std::span<const int> labels);
double evaluate_accuracy(const Model& model, const Batch& batch);
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels);

/// Mean cross-entropy in eval mode.
double evaluate_loss(const Model& model, const Batch& batch);

/// Eval-mode logits computed in chunks.
Tensor predict(const Model& model, const Tensor& images, std::size_t chunk = 32);

}  // namespace advrobust
