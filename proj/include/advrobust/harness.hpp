#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "advrobust/attacks.hpp"
#include "advrobust/data.hpp"
#include "advrobust/models.hpp"
#include "advrobust/training.hpp"

namespace advrobust {

inline constexpr const char* kCodeVersion = "0.1.0";

/// Family pairs use the family of each model (overrides in `family`, else
/// the registry family, else the model name). The within- vs cross-family
/// trend maps families through `super_family` (identity when absent).
struct FamilyGrouping {
    std::map<std::string, std::string> family;        // model name -> family
    std::map<std::string, std::string> super_family;  // family -> super-family

    std::string family_of(const std::string& model) const;
    std::string super_family_of(const std::string& model) const;
};

/// Registry families, with brainnet and dilation sharing "resnet-like".
FamilyGrouping default_grouping();

struct ExperimentPlan {
    std::vector<std::string> sources;
    std::vector<std::string> targets;
    std::vector<std::string> variants;
    std::vector<AttackConfig> attacks;
    std::vector<std::uint64_t> seeds{0};
    std::size_t corpus_per_class = 100;
    std::uint64_t corpus_seed = 1;
    std::optional<std::filesystem::path> image_folder;
    TrainConfig train;
    std::filesystem::path output_dir = "runs/default";
    bool train_missing = true;  // otherwise a missing checkpoint is an error
    bool force_retrain = false;
    bool save_adversarial_sets = false;
    FamilyGrouping grouping = default_grouping();
};

/// FGSM ε ∈ {0.02,0.03,0.04,0.05}; PGD at ε = 0.03 with (ε/iters, 10),
/// (ε/4, 20) and (ε/iters, 20).
std::vector<AttackConfig> default_attack_grid();

/// All eight registry models as sources and targets, the three variants,
/// the default attack grid, and the desk training preset.
ExperimentPlan default_plan();

/// Throws std::invalid_argument listing every problem.
void validate(const ExperimentPlan& plan);

struct MatrixCell {
    std::string variant;
    std::string source;
    std::string target;
    AttackConfig attack;
    std::uint64_t seed = 0;
    bool applicable = true;  // false: source and target resolutions differ
    double clean_acc = 0.0;
    double adv_acc = 0.0;

    double drop() const { return clean_acc - adv_acc; }
};

struct TransferMatrix {
    std::vector<MatrixCell> cells;

    /// variant,source,target,attack,epsilon,alpha,iterations,seed,clean_acc,adv_acc,drop
    std::string to_csv() const;
    /// Throws std::runtime_error naming the offending line.
    static TransferMatrix from_csv(const std::string& text);

    std::vector<std::string> variants() const;
    std::vector<std::string> sources() const;
    std::vector<std::string> targets() const;
    std::vector<std::uint64_t> seeds() const;
    /// Distinct configs in first-appearance order.
    std::vector<AttackConfig> attacks() const;
};

/// "fgsm" or "pgd-<schedule>"; iterations live in their own column.
std::string attack_column(const AttackConfig& config);
/// Step size reported in the CSV (ε for FGSM).
double attack_alpha(const AttackConfig& config);

/// Observation points for callers that need more than the matrix.
struct RunHooks {
    std::function<void(const std::string& variant, std::uint64_t seed, const std::string& name, const Model&,
                       const DatasetVariant&)>
        on_model_ready;
    std::function<void(const AdversarialSet&, const Batch& clean)> on_adversarial_set;
    std::function<void(const std::string& message)> log;
};

struct RunResult {
    TransferMatrix matrix;
    std::size_t generations = 0;  // adversarial sets produced
    std::size_t models_trained = 0;
    std::vector<std::filesystem::path> files;  // relative to output_dir
    std::map<std::string, std::string> corpus_hashes;  // per variant
};

/// Trains or loads every model per (variant, seed), generates each
/// adversarial set once per (source, config, variant, seed), evaluates it
/// on every target, and writes matrix.csv plus manifest.json.
RunResult run_plan(const ExperimentPlan& plan, const RunHooks& hooks = {});

/// Corpus named by the plan: the image folder or the procedural generator,
/// at full resolution.
Corpus build_corpus(const ExperimentPlan& plan);

/// Variant `name` over `corpus`, split with the plan's corpus seed.
DatasetVariant build_variant(const ExperimentPlan& plan, const Corpus& corpus, const std::string& name);

/// Writes <output>/splits/<variant>.json: corpus source, seed, sizes, hash
/// and the four split index lists. Returns the path.
std::filesystem::path write_split_manifest(const ExperimentPlan& plan, const DatasetVariant& variant);

struct ObtainedModel {
    Model model;
    bool trained = false;
    std::filesystem::path checkpoint;
    std::optional<std::filesystem::path> train_report;  // when one exists on disk
};

/// Loads the checkpoint for (variant, seed, name) unless forced; otherwise
/// trains, saves the checkpoint and writes the per-epoch CSV. Frozen on return.
ObtainedModel obtain_model(const ExperimentPlan& plan, const DatasetVariant& variant, std::uint64_t seed,
                           const std::string& name, const std::function<void(const std::string&)>& log = {});

std::filesystem::path checkpoint_path(const ExperimentPlan& plan, const std::string& variant, std::uint64_t seed,
                                      const std::string& model);
std::filesystem::path train_report_path(const ExperimentPlan& plan, const std::string& variant, std::uint64_t seed,
                                        const std::string& model);

/// Per-cell attack seed derived from the plan seed and cell coordinates.
std::uint64_t cell_seed(std::uint64_t seed, const std::string& variant, const std::string& source,
                        std::size_t attack_index);

/// Model-initialization seed for one (seed, model) pair.
std::uint64_t model_seed(std::uint64_t seed, const std::string& model);

struct SummaryRow {
    std::string variant;
    std::string target;
    AttackConfig attack;
    std::string seed;  // a seed value or "mean"
    double clean = 0.0;
    std::optional<double> white_box;
    std::optional<double> black_box_mean;
    std::optional<double> black_box_min;

    std::optional<double> white_box_drop() const;
    std::optional<double> black_box_drop() const;
};

struct FamilyPairRow {
    std::string variant;
    std::string source_family;
    std::string target_family;
    AttackConfig attack;
    double mean_drop = 0.0;
    std::size_t cells = 0;
};

struct TrendReport {
    std::optional<double> within_family_drop;
    std::optional<double> cross_family_drop;
    std::optional<bool> within_exceeds_cross;
    std::map<std::string, double> black_box_drop_by_variant;
    std::optional<bool> shrunk_aug_exceeds_full_aug;
    std::optional<bool> shrunk_noaug_exceeds_shrunk_aug;
    /// "variant/model" entries whose FGSM white-box accuracy rises with ε.
    std::vector<std::string> monotonicity_deviations;
};

struct Summary {
    std::vector<SummaryRow> rows;
    std::vector<FamilyPairRow> family_pairs;
    TrendReport trend;
};

/// Throws std::invalid_argument when a (variant, seed, attack) block lacks a
/// source × target cell.
Summary summarize(const TransferMatrix& matrix, const FamilyGrouping& grouping = default_grouping());

std::string format_summary(const Summary& summary);

}  // namespace advrobust
