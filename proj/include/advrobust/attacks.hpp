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

enum class AttackKind { kFgsm, kPgd };
enum class AlphaSchedule { kFixed, kEpsOver4, kEpsOverIters };

std::string to_string(AttackKind kind);
std::string to_string(AlphaSchedule schedule);
AttackKind attack_kind_from_string(const std::string& text);
AlphaSchedule alpha_schedule_from_string(const std::string& text);

struct AttackConfig {
    AttackKind kind = AttackKind::kFgsm;
    double epsilon = 0.03;
    AlphaSchedule alpha_schedule = AlphaSchedule::kEpsOver4;
    double alpha = 0.0;  // used by kFixed only
    std::size_t iterations = 10;
    std::uint64_t rng_seed = 0;

    bool operator==(const AttackConfig&) const = default;
};

AttackConfig fgsm_config(double epsilon);
AttackConfig pgd_config(double epsilon, AlphaSchedule schedule, std::size_t iterations, std::uint64_t rng_seed = 0);

/// Throws std::invalid_argument for epsilon ≤ 0 (or outside [0,1]),
/// nonpositive iterations, or a nonpositive resolved step.
void validate(const AttackConfig& config);

/// PGD step size. eps_over_4 → ε/4, eps_over_iters → ε/iterations, fixed → α.
double resolve_alpha(const AttackConfig& config);

/// Short label such as "fgsm" or "pgd-eps_over_4-10".
std::string attack_label(const AttackConfig& config);

/// Gradient of the summed cross-entropy with respect to the input batch,
/// so every example sees the gradient of its own loss.
Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> labels);

/// Loss gradient with respect to the input batch. The attacks only need
/// this, so they also run against models outside the registry.
using GradientFn = std::function<Tensor(const Tensor& x, std::span<const int> labels)>;

/// x + ε·sign(∇), clamped to [0,1]. sign(0) = 0.
Tensor fgsm(const GradientFn& gradient, const Tensor& x, std::span<const int> labels, double epsilon);
Tensor fgsm(const Model& model, const Tensor& x, std::span<const int> labels, double epsilon);

/// Called after the random start (iteration 0) and after every step.
using PgdObserver = std::function<void(std::size_t iteration, const Tensor& iterate)>;

/// Random start U(−ε, ε) per pixel, then `iterations` signed steps each
/// followed by a clip to [x−ε, x+ε] and a clamp to [0,1]. The noise of
/// example i comes from derive_seed(rng_seed, first_index + i).
Tensor pgd(const GradientFn& gradient, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
           std::size_t first_index = 0, const PgdObserver& observer = {});
Tensor pgd(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
           std::size_t first_index = 0, const PgdObserver& observer = {});

/// Dispatches on config.kind.
Tensor attack(const Model& model, const Tensor& x, std::span<const int> labels, const AttackConfig& config,
              std::size_t first_index = 0);

/// max |a − b| over all elements.
double linf_distance(const Tensor& a, const Tensor& b);
bool within_unit_range(const Tensor& x);

struct AdversarialSet {
    std::string source_model;
    std::string variant;
    AttackConfig config;
    std::uint64_t corpus_hash = 0;
    std::vector<std::size_t> indices;  // into the variant images (attack split)
    Tensor examples;                   // [N,3,H,W]
    std::vector<int> labels;

    std::size_t size() const noexcept { return labels.size(); }
};

inline constexpr std::uint32_t kAdversarialSetVersion = 1;

/// Attacks every image of the variant's attack split with its true label.
/// The source model must be frozen and match the variant resolution.
AdversarialSet generate_adversarial_set(const Model& source, const DatasetVariant& variant,
                                        const AttackConfig& config, std::size_t chunk = 32);

void save(const AdversarialSet& set, const std::filesystem::path& path);
AdversarialSet load_adversarial_set(const std::filesystem::path& path);

}  // namespace advrobust
