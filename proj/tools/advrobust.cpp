// advrobust: corpus generation, training, attacks, transfer matrices and reports.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "advrobust/config.hpp"
#include "advrobust/harness.hpp"
#include "advrobust/report.hpp"
#include "json.hpp"

using namespace advrobust;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    bool force = false;
    std::string out;
    std::vector<std::string> models;
    std::string variant;
    std::string matrix;
};

void add_common(CLI::App* cmd, Options& o, bool with_models) {
    cmd->add_option("--config", o.config, "run configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "run with this single seed");
    cmd->add_option("--out", o.out, "output directory");
    if (with_models) {
        cmd->add_flag("--force", o.force, "retrain even when checkpoints exist");
        cmd->add_option("--models", o.models, "comma-separated model names")->delimiter(',');
        cmd->add_option("--variant", o.variant, "dataset variant")
            ->check(CLI::IsMember({"full-aug", "shrunk-aug", "shrunk-noaug"}));
    }
}

void log_line(const std::string& msg) { std::cerr << msg << "\n"; }

std::string registry_list() {
    std::string s;
    for (const auto& n : registry_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
}

ExperimentPlan make_plan(const Options& o) {
    ExperimentPlan plan = o.config.empty() ? default_plan() : load_config(o.config);
    if (o.seed) plan.seeds = {*o.seed};
    if (!o.out.empty()) plan.output_dir = o.out;
    plan.force_retrain = o.force;
    if (!o.models.empty()) {
        const auto known = registry_names();
        for (const auto& m : o.models)
            if (std::find(known.begin(), known.end(), m) == known.end())
                throw ConfigError("unknown model '" + m + "'; registry models: " + registry_list());
        plan.sources = plan.targets = o.models;
    }
    if (!o.variant.empty()) plan.variants = {o.variant};
    try {
        validate(plan);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return plan;
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_manifest(const fs::path& path, const std::string& command, nlohmann::ordered_json body,
                    std::vector<std::string> files) {
    nlohmann::ordered_json j;
    j["format"] = "advrobust-" + command + "-manifest";
    j["version"] = 1;
    j["code_version"] = kCodeVersion;
    for (auto& [k, v] : body.items()) j[k] = v;
    files.push_back(path.filename().string());
    std::sort(files.begin(), files.end());
    j["files"] = files;
    write_text(path, j.dump(2) + "\n");
}

int cmd_gen_data(const Options& o) {
    ExperimentPlan plan = make_plan(o);
    if (o.seed) plan.corpus_seed = *o.seed;
    plan.output_dir = o.out.empty() ? plan.output_dir / "corpus" : fs::path(o.out);
    check_paths(plan);
    const Corpus corpus = generate_corpus(plan.corpus_per_class, kFullResolution, plan.corpus_seed);
    std::vector<std::string> files;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "class%d/img%05zu.png", corpus[i].label, i);
        const fs::path p = plan.output_dir / name;
        fs::create_directories(p.parent_path());
        write_png(p, corpus[i].pixels);
        files.push_back(name);
    }
    nlohmann::ordered_json body;
    body["per_class"] = plan.corpus_per_class;
    body["resolution"] = kFullResolution;
    body["seed"] = plan.corpus_seed;
    body["corpus_hash"] = hex64(corpus_hash(corpus));
    write_manifest(plan.output_dir / "manifest.json", "gen-data", body, files);
    std::cout << "wrote " << corpus.size() << " images to " << plan.output_dir.string() << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    const ExperimentPlan plan = make_plan(o);
    check_paths(plan);
    std::vector<std::string> models = plan.sources;
    for (const auto& t : plan.targets)
        if (std::find(models.begin(), models.end(), t) == models.end()) models.push_back(t);
    const Corpus corpus = build_corpus(plan);
    std::vector<std::string> files;
    nlohmann::ordered_json body, trained = nlohmann::ordered_json::array();
    for (const auto& vname : plan.variants) {
        const DatasetVariant variant = build_variant(plan, corpus, vname);
        const Batch test = gather(variant, variant.splits.test);
        files.push_back(fs::relative(write_split_manifest(plan, variant), plan.output_dir).generic_string());
        for (const auto seed : plan.seeds)
            for (const auto& name : models) {
                const ObtainedModel got = obtain_model(plan, variant, seed, name, log_line);
                files.push_back(fs::relative(got.checkpoint, plan.output_dir).generic_string());
                if (got.train_report) files.push_back(fs::relative(*got.train_report, plan.output_dir).generic_string());
                const double acc = evaluate_accuracy(got.model, test);
                std::printf("%-14s seed %-3llu %-20s test accuracy %.4f%s\n", vname.c_str(),
                            static_cast<unsigned long long>(seed), name.c_str(), acc, got.trained ? "" : " (loaded)");
                nlohmann::ordered_json e;
                e["variant"] = vname;
                e["seed"] = seed;
                e["model"] = name;
                e["test_accuracy"] = acc;
                trained.push_back(e);
            }
    }
    body["models"] = trained;
    write_manifest(plan.output_dir / "train-manifest.json", "train", body, files);
    return 0;
}

int cmd_attack(const Options& o) {
    const ExperimentPlan plan = make_plan(o);
    check_paths(plan);
    const Corpus corpus = build_corpus(plan);
    std::vector<std::string> files;
    nlohmann::ordered_json body, sets = nlohmann::ordered_json::array();
    for (const auto& vname : plan.variants) {
        const DatasetVariant variant = build_variant(plan, corpus, vname);
        const Batch clean = gather(variant, variant.splits.attack);
        files.push_back(fs::relative(write_split_manifest(plan, variant), plan.output_dir).generic_string());
        for (const auto seed : plan.seeds)
            for (const auto& name : plan.sources) {
                const ObtainedModel got = obtain_model(plan, variant, seed, name, log_line);
                files.push_back(fs::relative(got.checkpoint, plan.output_dir).generic_string());
                if (got.train_report) files.push_back(fs::relative(*got.train_report, plan.output_dir).generic_string());
                const double clean_acc = evaluate_accuracy(got.model, clean);
                for (std::size_t a = 0; a < plan.attacks.size(); ++a) {
                    AttackConfig cfg = plan.attacks[a];
                    cfg.rng_seed = cell_seed(seed, vname, name, a);
                    const AdversarialSet set = generate_adversarial_set(got.model, variant, cfg);
                    const double adv_acc = evaluate_accuracy(got.model, set.examples, set.labels);
                    const fs::path p = plan.output_dir / "adversarial" / vname / ("seed" + std::to_string(seed)) /
                                       (name + "_" + std::to_string(a) + ".advset");
                    fs::create_directories(p.parent_path());
                    save(set, p);
                    files.push_back(fs::relative(p, plan.output_dir).generic_string());
                    std::printf("%-14s seed %-3llu %-20s %-22s eps %.3f clean %.4f white-box %.4f\n", vname.c_str(),
                                static_cast<unsigned long long>(seed), name.c_str(), attack_label(cfg).c_str(),
                                cfg.epsilon, clean_acc, adv_acc);
                    nlohmann::ordered_json e;
                    e["file"] = files.back();
                    e["variant"] = vname;
                    e["seed"] = seed;
                    e["source"] = name;
                    e["attack"] = attack_label(cfg);
                    e["epsilon"] = cfg.epsilon;
                    e["alpha"] = attack_alpha(cfg);
                    e["clean_acc"] = clean_acc;
                    e["white_box_acc"] = adv_acc;
                    sets.push_back(e);
                }
            }
    }
    body["evaluation_split"] = "attack";
    body["sets"] = sets;
    write_manifest(plan.output_dir / "attack-manifest.json", "attack", body, files);
    return 0;
}

int cmd_matrix(const Options& o) {
    const ExperimentPlan plan = make_plan(o);
    check_paths(plan);
    RunHooks hooks;
    hooks.log = log_line;
    const RunResult result = run_plan(plan, hooks);
    std::cout << format_summary(summarize(result.matrix, plan.grouping));
    std::cerr << "wrote " << (plan.output_dir / "matrix.csv").string() << " (" << result.matrix.cells.size()
              << " cells, " << result.generations << " adversarial sets)\n";
    return 0;
}

int cmd_report(const Options& o) {
    const ExperimentPlan plan = o.config.empty() ? default_plan() : load_config(o.config);
    const fs::path matrix_path = o.matrix.empty() ? plan.output_dir / "matrix.csv" : fs::path(o.matrix);
    std::ifstream in(matrix_path, std::ios::binary);
    if (!in) throw ConfigError("cannot read matrix CSV " + matrix_path.string());
    std::ostringstream text;
    text << in.rdbuf();
    const TransferMatrix matrix = TransferMatrix::from_csv(text.str());
    const fs::path out = o.out.empty() ? matrix_path.parent_path() / "report" : fs::path(o.out);
    const auto files = write_report(matrix, text.str(), out, plan.grouping);
    std::cout << format_summary(summarize(matrix, plan.grouping));
    std::cerr << "wrote " << files.size() << " files to " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial robustness and transferability harness"};
    app.require_subcommand(1);
    Options o;
    auto* gen = app.add_subcommand("gen-data", "write the procedural corpus as PNG class folders");
    auto* train = app.add_subcommand("train", "train and checkpoint models (skips existing checkpoints)");
    auto* attack = app.add_subcommand("attack", "generate adversarial sets and report white-box accuracy");
    auto* matrix = app.add_subcommand("matrix", "run the transfer plan and write matrix.csv");
    auto* report = app.add_subcommand("report", "render SVG charts and a text summary from matrix.csv");
    add_common(gen, o, false);
    add_common(train, o, true);
    add_common(attack, o, true);
    add_common(matrix, o, true);
    report->add_option("--config", o.config, "run configuration file")->check(CLI::ExistingFile);
    report->add_option("--out", o.out, "report directory (default: <matrix dir>/report)");
    report->add_option("matrix", o.matrix, "matrix CSV (default: <output dir>/matrix.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_gen_data(o);
        if (*train) return cmd_train(o);
        if (*attack) return cmd_attack(o);
        if (*matrix) return cmd_matrix(o);
        if (*report) return cmd_report(o);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
