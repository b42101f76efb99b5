#include "advrobust/harness.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "advrobust/rng.hpp"
#include "json.hpp"

namespace advrobust {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

std::size_t csv_iterations(const AttackConfig& c) { return c.kind == AttackKind::kFgsm ? 1 : c.iterations; }

// Identity of an attack configuration as it appears in the CSV.
std::string attack_key(const AttackConfig& c) {
    return attack_column(c) + "|" + fixed6(c.epsilon) + "|" + fixed6(attack_alpha(c)) + "|" +
           std::to_string(csv_iterations(c));
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::string FamilyGrouping::family_of(const std::string& model) const {
    if (auto it = family.find(model); it != family.end()) return it->second;
    if (auto spec = registry_find(model)) return to_string(spec->family);
    return model;
}

std::string FamilyGrouping::super_family_of(const std::string& model) const {
    const std::string f = family_of(model);
    if (auto it = super_family.find(f); it != super_family.end()) return it->second;
    return f;
}

FamilyGrouping default_grouping() {
    FamilyGrouping g;
    g.super_family = {{"brainnet", "resnet-like"}, {"dilation", "resnet-like"}};
    return g;
}

std::vector<AttackConfig> default_attack_grid() {
    std::vector<AttackConfig> grid;
    for (double eps : {0.02, 0.03, 0.04, 0.05}) grid.push_back(fgsm_config(eps));
    grid.push_back(pgd_config(0.03, AlphaSchedule::kEpsOverIters, 10));
    grid.push_back(pgd_config(0.03, AlphaSchedule::kEpsOver4, 20));
    grid.push_back(pgd_config(0.03, AlphaSchedule::kEpsOverIters, 20));
    return grid;
}

ExperimentPlan default_plan() {
    ExperimentPlan plan;
    plan.sources = registry_names();
    plan.targets = registry_names();
    plan.variants = default_variant_names();
    plan.attacks = default_attack_grid();
    plan.train.learning_rate = 1e-3;
    return plan;
}

void validate(const ExperimentPlan& plan) {
    std::vector<std::string> problems;
    const auto known = registry_names();
    auto check_models = [&](const std::vector<std::string>& names, const char* role) {
        if (names.empty()) problems.push_back(std::string("no ") + role + " models");
        for (const auto& n : names)
            if (std::find(known.begin(), known.end(), n) == known.end())
                problems.push_back(std::string("unknown ") + role + " model '" + n + "'");
    };
    check_models(plan.sources, "source");
    check_models(plan.targets, "target");
    bool diagonal = false;
    for (const auto& s : plan.sources) diagonal |= std::find(plan.targets.begin(), plan.targets.end(), s) != plan.targets.end();
    if (!plan.sources.empty() && !plan.targets.empty() && !diagonal)
        problems.push_back("no model is both source and target (white-box diagonal missing)");
    if (plan.variants.empty()) problems.push_back("no dataset variants");
    for (const auto& v : plan.variants) {
        try {
            parse_variant_name(v);
        } catch (const std::invalid_argument& e) {
            problems.push_back(e.what());
        }
    }
    if (plan.attacks.empty()) problems.push_back("no attack configurations");
    for (const auto& a : plan.attacks) {
        try {
            validate(a);
        } catch (const std::invalid_argument& e) {
            problems.push_back(attack_label(a) + ": " + e.what());
        }
    }
    if (plan.seeds.empty()) problems.push_back("no seeds");
    if (!plan.image_folder && plan.corpus_per_class < 10)
        problems.push_back("corpus_per_class must be at least 10 for stratified splits");
    try {
        validate(plan.train);
    } catch (const std::invalid_argument& e) {
        problems.push_back(e.what());
    }
    if (!problems.empty()) {
        std::string msg = "invalid experiment plan:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw std::invalid_argument(msg);
    }
}

std::string attack_column(const AttackConfig& config) {
    if (config.kind == AttackKind::kFgsm) return "fgsm";
    return "pgd-" + to_string(config.alpha_schedule);
}

double attack_alpha(const AttackConfig& config) {
    return config.kind == AttackKind::kFgsm ? config.epsilon : resolve_alpha(config);
}

std::string TransferMatrix::to_csv() const {
    std::ostringstream os;
    os << "variant,source,target,attack,epsilon,alpha,iterations,seed,clean_acc,adv_acc,drop\n";
    for (const auto& c : cells) {
        os << c.variant << ',' << c.source << ',' << c.target << ',' << attack_column(c.attack) << ','
           << fixed6(c.attack.epsilon) << ',' << fixed6(attack_alpha(c.attack)) << ',' << csv_iterations(c.attack)
           << ',' << c.seed << ',';
        if (c.applicable)
            os << fixed6(c.clean_acc) << ',' << fixed6(c.adv_acc) << ',' << fixed6(c.drop()) << '\n';
        else
            os << "n/a,n/a,n/a\n";
    }
    return os.str();
}

TransferMatrix TransferMatrix::from_csv(const std::string& text) {
    static const std::string kHeader =
        "variant,source,target,attack,epsilon,alpha,iterations,seed,clean_acc,adv_acc,drop";
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw std::runtime_error("matrix CSV line " + std::to_string(lineno) + ": " + why);
    };
    auto number = [&](const std::string& field, const char* what) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(field, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != field.size() || field.empty() || !std::isfinite(v))
            fail(std::string("bad ") + what + " '" + field + "'");
        return v;
    };
    auto integer = [&](const std::string& field, const char* what) {
        if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos)
            fail(std::string("bad ") + what + " '" + field + "'");
        try {
            return std::stoull(field);
        } catch (const std::exception&) {
            fail(std::string("bad ") + what + " '" + field + "'");
        }
        return 0ULL;
    };

    TransferMatrix m;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!header_seen) {
            if (line != kHeader) fail("expected header '" + kHeader + "'");
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 11) fail("expected 11 fields, found " + std::to_string(f.size()));
        MatrixCell c;
        c.variant = f[0];
        c.source = f[1];
        c.target = f[2];
        if (c.variant.empty() || c.source.empty() || c.target.empty()) fail("empty name field");
        const double eps = number(f[4], "epsilon");
        const double alpha = number(f[5], "alpha");
        const auto iters = integer(f[6], "iterations");
        if (f[3] == "fgsm") {
            c.attack = fgsm_config(eps);
        } else if (f[3].rfind("pgd-", 0) == 0) {
            AlphaSchedule schedule;
            try {
                schedule = alpha_schedule_from_string(f[3].substr(4));
            } catch (const std::invalid_argument&) {
                fail("unknown attack '" + f[3] + "'");
            }
            if (iters == 0) fail("PGD iterations must be positive");
            c.attack = pgd_config(eps, schedule, iters);
            if (schedule == AlphaSchedule::kFixed) c.attack.alpha = alpha;
        } else {
            fail("unknown attack '" + f[3] + "'");
        }
        c.seed = integer(f[7], "seed");
        if (f[8] == "n/a" || f[9] == "n/a") {
            if (f[8] != "n/a" || f[9] != "n/a") fail("partially missing accuracy fields");
            c.applicable = false;
        } else {
            c.clean_acc = number(f[8], "clean_acc");
            c.adv_acc = number(f[9], "adv_acc");
            number(f[10], "drop");
            if (c.clean_acc < 0.0 || c.clean_acc > 1.0 || c.adv_acc < 0.0 || c.adv_acc > 1.0)
                fail("accuracy outside [0,1]");
        }
        m.cells.push_back(std::move(c));
    }
    if (!header_seen) throw std::runtime_error("matrix CSV is empty");
    if (m.cells.empty()) throw std::runtime_error("matrix CSV has no data rows");
    return m;
}

std::vector<std::string> TransferMatrix::variants() const {
    std::vector<std::string> v;
    for (const auto& c : cells) push_unique(v, c.variant);
    return v;
}

std::vector<std::string> TransferMatrix::sources() const {
    std::vector<std::string> v;
    for (const auto& c : cells) push_unique(v, c.source);
    return v;
}

std::vector<std::string> TransferMatrix::targets() const {
    std::vector<std::string> v;
    for (const auto& c : cells) push_unique(v, c.target);
    return v;
}

std::vector<std::uint64_t> TransferMatrix::seeds() const {
    std::vector<std::uint64_t> v;
    for (const auto& c : cells) push_unique(v, c.seed);
    return v;
}

std::vector<AttackConfig> TransferMatrix::attacks() const {
    std::vector<AttackConfig> v;
    std::set<std::string> seen;
    for (const auto& c : cells)
        if (seen.insert(attack_key(c.attack)).second) v.push_back(c.attack);
    return v;
}

std::uint64_t cell_seed(std::uint64_t seed, const std::string& variant, const std::string& source,
                        std::size_t attack_index) {
    return derive_seed(derive_seed(seed, fnv1a(variant)), fnv1a(source), attack_index);
}

std::uint64_t model_seed(std::uint64_t seed, const std::string& model) { return derive_seed(seed, fnv1a(model)); }

fs::path checkpoint_path(const ExperimentPlan& plan, const std::string& variant, std::uint64_t seed,
                         const std::string& model) {
    return plan.output_dir / "checkpoints" / variant / ("seed" + std::to_string(seed)) / (model + ".ckpt");
}

namespace {

struct LoadedModel {
    std::string name;
    std::optional<Model> model;
    bool applicable = false;  // input resolution matches the variant
};

std::string manifest_json(const ExperimentPlan& plan, const RunResult& result) {
    nlohmann::ordered_json j;
    j["format"] = "advrobust-run-manifest";
    j["version"] = 1;
    j["code_version"] = kCodeVersion;
    j["evaluation_split"] = "attack";
    auto& p = j["plan"];
    p["sources"] = plan.sources;
    p["targets"] = plan.targets;
    p["variants"] = plan.variants;
    p["seeds"] = plan.seeds;
    auto attacks = nlohmann::ordered_json::array();
    for (const auto& a : plan.attacks) {
        nlohmann::ordered_json e;
        e["attack"] = to_string(a.kind);
        e["epsilon"] = a.epsilon;
        if (a.kind == AttackKind::kPgd) {
            e["alpha_schedule"] = to_string(a.alpha_schedule);
            e["alpha"] = resolve_alpha(a);
            e["iterations"] = a.iterations;
        }
        attacks.push_back(e);
    }
    p["attacks"] = attacks;
    auto& corpus = p["corpus"];
    if (plan.image_folder) {
        corpus["image_folder"] = plan.image_folder->string();
    } else {
        corpus["generator"] = "procedural";
        corpus["per_class"] = plan.corpus_per_class;
    }
    corpus["seed"] = plan.corpus_seed;
    auto& t = p["training"];
    t["phase"] = plan.train.phase == PhaseMode::kSingle ? "single" : "two_phase";
    t["learning_rate"] = plan.train.learning_rate;
    t["batch_size"] = plan.train.batch_size;
    t["max_epochs"] = plan.train.max_epochs;
    t["phase_epochs"] = plan.train.phase_epochs;
    t["patience"] = plan.train.patience;
    t["phase2_lr_divisor"] = plan.train.phase2_lr_divisor;
    j["corpus_hashes"] = result.corpus_hashes;
    j["adversarial_sets_generated"] = result.generations;
    std::vector<std::string> files;
    for (const auto& f : result.files) files.push_back(f.generic_string());
    j["files"] = files;
    return j.dump(2) + "\n";
}

}  // namespace

fs::path train_report_path(const ExperimentPlan& plan, const std::string& variant, std::uint64_t seed,
                           const std::string& model) {
    return plan.output_dir / "train" / variant / ("seed" + std::to_string(seed)) / (model + ".csv");
}

Corpus build_corpus(const ExperimentPlan& plan) {
    if (plan.image_folder) {
        Corpus corpus = load_image_folder(*plan.image_folder, kFullResolution);
        for (const auto& img : corpus)
            if (img.label >= kNumClasses)
                throw std::runtime_error("image folder " + plan.image_folder->string() + " has more than " +
                                         std::to_string(kNumClasses) + " class subdirectories");
        return corpus;
    }
    return generate_corpus(plan.corpus_per_class, kFullResolution, plan.corpus_seed);
}

DatasetVariant build_variant(const ExperimentPlan& plan, const Corpus& corpus, const std::string& name) {
    const auto [resolution, augmented] = parse_variant_name(name);
    DatasetVariant variant = make_variant(corpus, resolution, augmented, plan.corpus_seed);
    variant.name = name;
    return variant;
}

fs::path write_split_manifest(const ExperimentPlan& plan, const DatasetVariant& variant) {
    nlohmann::ordered_json j;
    j["format"] = "advrobust-split-manifest";
    j["version"] = 1;
    j["variant"] = variant.name;
    if (plan.image_folder) {
        j["image_folder"] = plan.image_folder->string();
    } else {
        j["generator"] = "procedural";
        j["per_class"] = plan.corpus_per_class;
    }
    j["seed"] = variant.seed;
    j["resolution"] = variant.image_size();
    j["augmented"] = variant.augmented;
    j["corpus_size"] = variant.images.size();
    j["corpus_hash"] = hex64(corpus_hash(variant.images));
    const std::pair<const char*, const std::vector<std::size_t>*> parts[] = {
        {"train", &variant.splits.train},
        {"val", &variant.splits.val},
        {"test", &variant.splits.test},
        {"attack", &variant.splits.attack}};
    for (const auto& [key, idx] : parts) j["sizes"][key] = idx->size();
    for (const auto& [key, idx] : parts) j["splits"][key] = *idx;
    const fs::path path = plan.output_dir / "splits" / (variant.name + ".json");
    fs::create_directories(path.parent_path());
    write_text(path, j.dump() + "\n");
    return path;
}

ObtainedModel obtain_model(const ExperimentPlan& plan, const DatasetVariant& variant, std::uint64_t seed,
                           const std::string& name, const std::function<void(const std::string&)>& log) {
    auto say = [&](const std::string& msg) {
        if (log) log(msg);
    };
    const fs::path ckpt = checkpoint_path(plan, variant.name, seed, name);
    const fs::path report_path = train_report_path(plan, variant.name, seed, name);
    std::optional<Model> model;
    bool trained = false;
    if (fs::exists(ckpt) && !plan.force_retrain) {
        model = Model::load(ckpt);
        if (model->spec().name != name)
            throw std::runtime_error("checkpoint " + ckpt.string() + " holds model '" + model->spec().name +
                                     "', expected '" + name + "'");
        say("loaded " + variant.name + "/" + name);
    } else if (plan.train_missing) {
        const auto spec = registry_find(name, variant.image_size());
        if (!spec) throw std::invalid_argument("unknown model '" + name + "'");
        model = Model::build(*spec, model_seed(seed, name));
        TrainConfig cfg = plan.train;
        cfg.seed = derive_seed(model_seed(seed, name), 1);
        const TrainReport report = train(*model, variant, cfg);
        fs::create_directories(ckpt.parent_path());
        model->save(ckpt);
        write_text(report_path, report.to_csv());
        trained = true;
        char msg[256];
        std::snprintf(msg, sizeof msg, "trained %s/%s: %zu epochs, best val loss %.4f", variant.name.c_str(),
                      name.c_str(), report.stopped_epoch, report.best_val_loss);
        say(msg);
    } else {
        throw std::runtime_error("missing checkpoint " + ckpt.string() + " (training disabled)");
    }
    model->set_trainable(false);
    ObtainedModel out{std::move(*model), trained, ckpt, std::nullopt};
    if (fs::exists(report_path)) out.train_report = report_path;
    return out;
}

RunResult run_plan(const ExperimentPlan& plan, const RunHooks& hooks) {
    validate(plan);
    auto log = [&](const std::string& msg) {
        if (hooks.log) hooks.log(msg);
    };
    fs::create_directories(plan.output_dir);
    RunResult result;
    std::set<fs::path> files;
    auto record_file = [&](const fs::path& p) { files.insert(fs::relative(p, plan.output_dir)); };

    const Corpus corpus = build_corpus(plan);

    std::vector<std::string> models = plan.sources;
    for (const auto& t : plan.targets) push_unique(models, t);

    for (const auto& variant_name : plan.variants) {
        const DatasetVariant variant = build_variant(plan, corpus, variant_name);
        result.corpus_hashes[variant_name] = hex64(corpus_hash(variant.images));
        record_file(write_split_manifest(plan, variant));
        const Batch clean = gather(variant, variant.splits.attack);
        const std::size_t side = variant.image_size();

        for (const auto seed : plan.seeds) {
            std::map<std::string, LoadedModel> loaded;
            for (const auto& name : models) {
                ObtainedModel got = obtain_model(plan, variant, seed, name, hooks.log);
                result.models_trained += got.trained;
                record_file(got.checkpoint);
                if (got.train_report) record_file(*got.train_report);
                LoadedModel lm;
                lm.name = name;
                lm.model.emplace(std::move(got.model));
                const auto& in = lm.model->spec().input_shape;
                lm.applicable = in.height == side && in.width == side;
                if (!lm.applicable) log("resolution mismatch: " + variant_name + "/" + name + " cells marked n/a");
                if (hooks.on_model_ready) hooks.on_model_ready(variant_name, seed, name, *lm.model, variant);
                loaded.emplace(name, std::move(lm));
            }

            std::map<std::string, double> clean_acc;
            for (const auto& t : plan.targets) {
                const auto& lm = loaded.at(t);
                if (lm.applicable) clean_acc[t] = evaluate_accuracy(*lm.model, clean);
            }

            for (const auto& s : plan.sources) {
                const auto& src = loaded.at(s);
                for (std::size_t a = 0; a < plan.attacks.size(); ++a) {
                    const AttackConfig& base = plan.attacks[a];
                    std::optional<AdversarialSet> set;
                    if (src.applicable) {
                        AttackConfig cfg = base;
                        cfg.rng_seed = cell_seed(seed, variant_name, s, a);
                        set = generate_adversarial_set(*src.model, variant, cfg);
                        ++result.generations;
                        if (hooks.on_adversarial_set) hooks.on_adversarial_set(*set, clean);
                        if (plan.save_adversarial_sets) {
                            const fs::path p = plan.output_dir / "adversarial" / variant_name /
                                               ("seed" + std::to_string(seed)) /
                                               (s + "_" + std::to_string(a) + ".advset");
                            fs::create_directories(p.parent_path());
                            save(*set, p);
                            record_file(p);
                        }
                    }
                    for (const auto& t : plan.targets) {
                        MatrixCell cell;
                        cell.variant = variant_name;
                        cell.source = s;
                        cell.target = t;
                        cell.attack = base;
                        cell.seed = seed;
                        const auto& tgt = loaded.at(t);
                        cell.applicable = src.applicable && tgt.applicable;
                        if (cell.applicable) {
                            cell.clean_acc = clean_acc.at(t);
                            cell.adv_acc = evaluate_accuracy(*tgt.model, set->examples, set->labels);
                        }
                        result.matrix.cells.push_back(cell);
                    }
                }
                log("attacked from " + variant_name + "/" + s);
            }
        }
    }

    const fs::path matrix_path = plan.output_dir / "matrix.csv";
    write_text(matrix_path, result.matrix.to_csv());
    record_file(matrix_path);
    result.files.assign(files.begin(), files.end());
    write_text(plan.output_dir / "manifest.json", manifest_json(plan, result));
    return result;
}

std::optional<double> SummaryRow::white_box_drop() const {
    if (!white_box) return std::nullopt;
    return clean - *white_box;
}

std::optional<double> SummaryRow::black_box_drop() const {
    if (!black_box_mean) return std::nullopt;
    return clean - *black_box_mean;
}

namespace {

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::optional<double> mean_opt(const std::vector<double>& v) {
    if (v.empty()) return std::nullopt;
    return mean_of(v);
}

}  // namespace

Summary summarize(const TransferMatrix& matrix, const FamilyGrouping& grouping) {
    if (matrix.cells.empty()) throw std::invalid_argument("summarize: empty matrix");
    const auto variants = matrix.variants();
    const auto sources = matrix.sources();
    const auto targets = matrix.targets();
    const auto seeds = matrix.seeds();
    const auto attacks = matrix.attacks();

    using Key = std::tuple<std::string, std::uint64_t, std::string, std::string, std::string>;
    std::map<Key, const MatrixCell*> index;
    for (const auto& c : matrix.cells) {
        const Key k{c.variant, c.seed, attack_key(c.attack), c.source, c.target};
        if (!index.emplace(k, &c).second)
            throw std::invalid_argument("summarize: duplicate cell " + c.variant + "/" + c.source + "->" + c.target +
                                        " " + attack_label(c.attack));
    }
    for (const auto& v : variants)
        for (const auto seed : seeds)
            for (const auto& a : attacks)
                for (const auto& s : sources)
                    for (const auto& t : targets)
                        if (!index.count({v, seed, attack_key(a), s, t}))
                            throw std::invalid_argument("summarize: incomplete matrix, missing " + v + "/" + s +
                                                        "->" + t + " " + attack_label(a) + " seed " +
                                                        std::to_string(seed));

    Summary out;
    for (const auto& v : variants)
        for (const auto& a : attacks) {
            const std::string ak = attack_key(a);
            for (const auto& t : targets) {
                std::vector<SummaryRow> per_seed;
                for (const auto seed : seeds) {
                    SummaryRow row;
                    row.variant = v;
                    row.target = t;
                    row.attack = a;
                    row.seed = std::to_string(seed);
                    std::vector<double> black;
                    bool any = false;
                    for (const auto& s : sources) {
                        const MatrixCell& c = *index.at({v, seed, ak, s, t});
                        if (!c.applicable) continue;
                        any = true;
                        row.clean = c.clean_acc;
                        if (s == t)
                            row.white_box = c.adv_acc;
                        else
                            black.push_back(c.adv_acc);
                    }
                    if (!any) continue;
                    row.black_box_mean = mean_opt(black);
                    if (!black.empty()) row.black_box_min = *std::min_element(black.begin(), black.end());
                    per_seed.push_back(row);
                }
                out.rows.insert(out.rows.end(), per_seed.begin(), per_seed.end());
                if (per_seed.size() > 1) {
                    SummaryRow m = per_seed.front();
                    m.seed = "mean";
                    std::vector<double> clean, wb, bbm, bbmin;
                    for (const auto& r : per_seed) {
                        clean.push_back(r.clean);
                        if (r.white_box) wb.push_back(*r.white_box);
                        if (r.black_box_mean) bbm.push_back(*r.black_box_mean);
                        if (r.black_box_min) bbmin.push_back(*r.black_box_min);
                    }
                    m.clean = mean_of(clean);
                    m.white_box = mean_opt(wb);
                    m.black_box_mean = mean_opt(bbm);
                    m.black_box_min = mean_opt(bbmin);
                    out.rows.push_back(m);
                }
            }

            // Family pairs: every applicable off-diagonal cell lands in exactly one group.
            std::map<std::pair<std::string, std::string>, std::vector<double>> pairs;
            for (const auto seed : seeds)
                for (const auto& s : sources)
                    for (const auto& t : targets) {
                        if (s == t) continue;
                        const MatrixCell& c = *index.at({v, seed, ak, s, t});
                        if (!c.applicable) continue;
                        pairs[{grouping.family_of(s), grouping.family_of(t)}].push_back(c.drop());
                    }
            for (const auto& [fam, drops] : pairs)
                out.family_pairs.push_back({v, fam.first, fam.second, a, mean_of(drops), drops.size()});
        }

    TrendReport& tr = out.trend;
    std::vector<double> within, cross;
    std::map<std::string, std::vector<double>> by_variant;
    for (const auto& c : matrix.cells) {
        if (!c.applicable || c.source == c.target) continue;
        const bool same = grouping.super_family_of(c.source) == grouping.super_family_of(c.target);
        (same ? within : cross).push_back(c.drop());
        by_variant[c.variant].push_back(c.drop());
    }
    tr.within_family_drop = mean_opt(within);
    tr.cross_family_drop = mean_opt(cross);
    if (tr.within_family_drop && tr.cross_family_drop)
        tr.within_exceeds_cross = *tr.within_family_drop > *tr.cross_family_drop;
    for (const auto& [v, drops] : by_variant) tr.black_box_drop_by_variant[v] = mean_of(drops);
    const auto& bv = tr.black_box_drop_by_variant;
    if (bv.count("full-aug") && bv.count("shrunk-aug"))
        tr.shrunk_aug_exceeds_full_aug = bv.at("shrunk-aug") > bv.at("full-aug");
    if (bv.count("shrunk-aug") && bv.count("shrunk-noaug"))
        tr.shrunk_noaug_exceeds_shrunk_aug = bv.at("shrunk-noaug") > bv.at("shrunk-aug");

    for (const auto& v : variants)
        for (const auto seed : seeds)
            for (const auto& m : sources) {
                if (std::find(targets.begin(), targets.end(), m) == targets.end()) continue;
                std::vector<std::pair<double, double>> curve;
                for (const auto& a : attacks) {
                    if (a.kind != AttackKind::kFgsm) continue;
                    const MatrixCell& c = *index.at({v, seed, attack_key(a), m, m});
                    if (c.applicable) curve.emplace_back(a.epsilon, c.adv_acc);
                }
                std::sort(curve.begin(), curve.end());
                for (std::size_t i = 1; i < curve.size(); ++i)
                    if (curve[i].second > curve[i - 1].second) {
                        tr.monotonicity_deviations.push_back(v + "/" + m + " (seed " + std::to_string(seed) + ")");
                        break;
                    }
            }
    return out;
}

namespace {

std::string opt3(const std::optional<double>& v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return buf;
}

std::string attack_text(const AttackConfig& a) {
    char buf[96];
    if (a.kind == AttackKind::kFgsm)
        std::snprintf(buf, sizeof buf, "FGSM eps=%.2f", a.epsilon);
    else
        std::snprintf(buf, sizeof buf, "PGD eps=%.2f alpha=%.4g iters=%zu", a.epsilon, resolve_alpha(a),
                      a.iterations);
    return buf;
}

}  // namespace

std::string format_summary(const Summary& summary) {
    std::ostringstream os;
    os << "Adversarial accuracy is measured on the attack split.\n\n";
    std::string block;
    char line[256];
    for (const auto& r : summary.rows) {
        const std::string head = r.variant + " | " + attack_text(r.attack);
        if (head != block) {
            block = head;
            os << "== " << head << "\n";
            std::snprintf(line, sizeof line, "%-20s %-5s %7s %7s %7s %7s %8s %8s\n", "target", "seed", "clean",
                          "white", "bb_mean", "bb_min", "wb_drop", "bb_drop");
            os << line;
        }
        std::snprintf(line, sizeof line, "%-20s %-5s %7.3f %7s %7s %7s %8s %8s\n", r.target.c_str(), r.seed.c_str(),
                      r.clean, opt3(r.white_box).c_str(), opt3(r.black_box_mean).c_str(),
                      opt3(r.black_box_min).c_str(), opt3(r.white_box_drop()).c_str(),
                      opt3(r.black_box_drop()).c_str());
        os << line;
    }

    os << "\n== Family-pair mean transfer drop (off-diagonal cells)\n";
    std::snprintf(line, sizeof line, "%-14s %-34s %-20s %-20s %8s %6s\n", "variant", "attack", "source_family",
                  "target_family", "drop", "cells");
    os << line;
    for (const auto& p : summary.family_pairs) {
        std::snprintf(line, sizeof line, "%-14s %-34s %-20s %-20s %8.3f %6zu\n", p.variant.c_str(),
                      attack_text(p.attack).c_str(), p.source_family.c_str(), p.target_family.c_str(), p.mean_drop,
                      p.cells);
        os << line;
    }

    const auto& t = summary.trend;
    auto yesno = [](const std::optional<bool>& b) { return b ? (*b ? std::string("yes") : std::string("no")) : "n/a"; };
    os << "\n== Trends (informational)\n";
    os << "within-family black-box drop: " << opt3(t.within_family_drop) << "\n";
    os << "cross-family black-box drop:  " << opt3(t.cross_family_drop) << "\n";
    os << "within-family exceeds cross-family: " << yesno(t.within_exceeds_cross) << "\n";
    for (const auto& [v, d] : t.black_box_drop_by_variant) {
        std::snprintf(line, sizeof line, "mean black-box drop %-14s %.3f\n", (v + ":").c_str(), d);
        os << line;
    }
    os << "shrunk-aug drop exceeds full-aug: " << yesno(t.shrunk_aug_exceeds_full_aug) << "\n";
    os << "shrunk-noaug drop exceeds shrunk-aug: " << yesno(t.shrunk_noaug_exceeds_shrunk_aug) << "\n";
    if (t.monotonicity_deviations.empty()) {
        os << "FGSM white-box accuracy is non-increasing in epsilon for every model.\n";
    } else {
        os << "FGSM white-box accuracy rises with epsilon for:";
        for (const auto& d : t.monotonicity_deviations) os << "\n  " << d;
        os << "\n";
    }
    return os.str();
}

}  // namespace advrobust
