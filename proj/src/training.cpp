#include "advrobust/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "advrobust/rng.hpp"

namespace advrobust {

void validate(const TrainConfig& config) {
    if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (config.batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (config.patience < 1) throw std::invalid_argument("patience must be at least 1");
    if (config.max_epochs < 1) throw std::invalid_argument("max_epochs must be at least 1");
    if (config.phase == PhaseMode::kTwoPhase && config.phase_epochs < 1)
        throw std::invalid_argument("phase_epochs must be at least 1");
    if (!(config.phase2_lr_divisor > 0.0)) throw std::invalid_argument("phase2_lr_divisor must be positive");
}

void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state, double lr,
               const AdamOptions& options) {
    if (grads.size() != params.size())
        throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (grads[i].size() != params[i].numel() || state.m[i].size() != params[i].numel())
            throw ShapeError("adam_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                             " elements, parameter has " + std::to_string(params[i].numel()));

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(options.beta1, t);
    const double c2 = 1.0 - std::pow(options.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = options.beta1 * m[k] + (1.0 - options.beta1) * g[k];
            v[k] = options.beta2 * v[k] + (1.0 - options.beta2) * g[k] * g[k];
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (std::sqrt(v_hat) + options.epsilon);
        }
    }
}

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_loss_(std::numeric_limits<double>::infinity()) {
    if (patience == 0) throw std::invalid_argument("patience must be at least 1");
}

bool EarlyStopping::update(std::size_t epoch, double val_loss) {
    improved_ = val_loss < best_loss_;
    if (improved_) {
        best_loss_ = val_loss;
        best_epoch_ = epoch;
        since_best_ = 0;
        return false;
    }
    ++since_best_;
    return since_best_ >= patience_;
}

std::string TrainReport::to_csv() const {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char line[160];
    for (const auto& e : epochs) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss, e.train_acc, e.val_loss,
                      e.val_acc);
        os << line;
    }
    return os.str();
}

Tensor predict(const Model& model, const Tensor& images, std::size_t chunk) {
    const std::size_t n = images.dim(0);
    const std::size_t per = images.numel() / n;
    Tensor logits(Shape{n, model.spec().num_classes});
    const std::size_t classes = model.spec().num_classes;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t end = std::min(n, start + chunk);
        Shape s = images.shape();
        s[0] = end - start;
        Tensor part(s, std::vector<double>(images.data().begin() + static_cast<std::ptrdiff_t>(start * per),
                                           images.data().begin() + static_cast<std::ptrdiff_t>(end * per)));
        Tensor out = model.forward(part);
        std::copy(out.data().begin(), out.data().end(),
                  logits.data().begin() + static_cast<std::ptrdiff_t>(start * classes));
    }
    return logits;
}

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels) {
    if (labels.empty()) throw std::invalid_argument("accuracy: empty label set");
    const auto pred = argmax_rows(logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate_accuracy(const Model& model, const Tensor& images, std::span<const int> labels) {
    if (labels.empty() || !images.defined()) throw std::invalid_argument("evaluate_accuracy: empty set");
    if (images.dim(0) != labels.size()) throw ShapeError("evaluate_accuracy: image and label counts differ");
    return accuracy_from_logits(predict(model, images), labels);
}

double evaluate_accuracy(const Model& model, const Batch& batch) {
    return evaluate_accuracy(model, batch.images, batch.labels);
}

double evaluate_loss(const Model& model, const Batch& batch) {
    return softmax_cross_entropy(predict(model, batch.images), batch.labels).item();
}

namespace {

class Trainer {
  public:
    Trainer(Model& model, const DatasetVariant& variant, const TrainConfig& config, const TrainHooks& hooks,
            TrainReport& report)
        : model_(model), variant_(variant), config_(config), hooks_(hooks), report_(report),
          val_(gather(variant, variant.splits.val)) {}

    double validation_loss() const { return evaluate_loss(model_, val_); }

    void run_phase(int phase, std::size_t max_epochs, double lr) {
        model_.set_trainable(true);
        AdamState adam;
        EarlyStopping stopper(config_.patience);
        const AdamOptions opts{config_.beta1, config_.beta2, config_.adam_epsilon};
        for (std::size_t local = 1; local <= max_epochs; ++local) {
            const std::size_t epoch = ++epoch_counter_;
            EpochRecord rec;
            rec.epoch = epoch;
            rec.phase = phase;
            rec.learning_rate = lr;
            double loss_sum = 0.0;
            std::size_t hits = 0, seen = 0;
            for (auto& batch : epoch_batches(variant_, epoch, config_.batch_size, derive_seed(config_.seed, epoch))) {
                Tape tape;
                Tensor logits = model_.forward_train(batch.images, &tape);
                Tensor loss = softmax_cross_entropy(logits, batch.labels, Reduction::kMean, &tape);
                tape.backward(loss);
                step(adam, lr, opts);
                const auto pred = argmax_rows(logits);
                for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == batch.labels[i] ? 1 : 0;
                loss_sum += loss.item() * static_cast<double>(batch.labels.size());
                seen += batch.labels.size();
            }
            rec.train_loss = loss_sum / static_cast<double>(seen);
            rec.train_acc = static_cast<double>(hits) / static_cast<double>(seen);
            const Tensor val_logits = predict(model_, val_.images);
            rec.val_acc = accuracy_from_logits(val_logits, val_.labels);
            rec.val_loss = softmax_cross_entropy(val_logits, val_.labels).item();
            if (hooks_.val_loss_override) rec.val_loss = hooks_.val_loss_override(epoch, rec.val_loss);
            report_.epochs.push_back(rec);
            if (hooks_.on_epoch) hooks_.on_epoch(rec);

            const bool stop = stopper.update(epoch, rec.val_loss);
            if (rec.val_loss < best_loss_) {
                best_loss_ = rec.val_loss;
                best_epoch_ = epoch;
                best_state_ = model_.state_snapshot();
            }
            if (stop) break;
        }
        // Restore the best parameters seen so far (possibly from an earlier phase).
        if (!best_state_.empty()) model_.load_state(best_state_);
    }

    void finish() {
        report_.stopped_epoch = epoch_counter_;
        report_.best_epoch = best_epoch_;
        report_.best_val_loss = best_loss_;
        model_.set_trainable(false);
    }

  private:
    void step(AdamState& adam, double lr, const AdamOptions& opts) {
        std::vector<Tensor> params;
        std::vector<std::vector<double>> grads;
        for (auto& p : model_.parameters()) {
            if (!p.value.requires_grad()) continue;
            params.push_back(p.value);
            if (p.value.has_grad()) {
                grads.emplace_back(p.value.grad().begin(), p.value.grad().end());
            } else {
                grads.emplace_back(p.value.numel(), 0.0);
            }
            p.value.zero_grad();
        }
        adam_step(params, grads, adam, lr, opts);
    }

    Model& model_;
    const DatasetVariant& variant_;
    const TrainConfig& config_;
    const TrainHooks& hooks_;
    TrainReport& report_;
    Batch val_;
    std::size_t epoch_counter_ = 0;
    std::size_t best_epoch_ = 0;
    double best_loss_ = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_state_;
};

}  // namespace

TrainReport train(Model& model, const DatasetVariant& variant, const TrainConfig& config, const TrainHooks& hooks) {
    validate(config);
    if (variant.splits.train.empty()) throw std::invalid_argument("train: empty training split");
    if (variant.splits.val.empty()) throw std::invalid_argument("train: empty validation split");
    const auto& in = model.spec().input_shape;
    if (in.height != variant.image_size() || in.width != variant.image_size())
        throw ShapeError("train: model '" + model.spec().name + "' expects " + std::to_string(in.height) +
                         "-pixel inputs, variant '" + variant.name + "' has " +
                         std::to_string(variant.image_size()));

    const auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    Trainer trainer(model, variant, config, hooks, report);
    report.initial_val_loss = trainer.validation_loss();
    if (config.phase == PhaseMode::kSingle) {
        trainer.run_phase(1, config.max_epochs, config.learning_rate);
    } else {
        const std::size_t frozen = default_frozen_prefix(model);
        report.phase1_frozen_prefix = frozen;
        model.set_frozen_prefix(frozen);
        trainer.run_phase(1, config.phase_epochs, config.learning_rate);
        model.set_frozen_prefix(0);
        trainer.run_phase(2, config.phase_epochs, config.learning_rate / config.phase2_lr_divisor);
    }
    trainer.finish();
    report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace advrobust
