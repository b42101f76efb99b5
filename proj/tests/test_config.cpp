#include <filesystem>
#include <fstream>

#include "advrobust/config.hpp"
#include "doctest.h"

using namespace advrobust;
namespace fs = std::filesystem;

namespace {

std::size_t error_line(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    return 0;
}

std::string error_text(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("config: empty text gives the default plan") {
    const ExperimentPlan a = parse_config("");
    const ExperimentPlan b = default_plan();
    CHECK(a.sources == b.sources);
    CHECK(a.variants == b.variants);
    CHECK(a.attacks == b.attacks);
    CHECK(a.train.learning_rate == b.train.learning_rate);
    CHECK(a.seeds == b.seeds);
}

TEST_CASE("config: the default text round-trips to the default plan") {
    const ExperimentPlan a = parse_config(default_config_text());
    const ExperimentPlan b = default_plan();
    CHECK(a.sources == b.sources);
    CHECK(a.targets == b.targets);
    CHECK(a.variants == b.variants);
    CHECK(a.attacks == b.attacks);
    CHECK(a.corpus_per_class == b.corpus_per_class);
    CHECK(a.corpus_seed == b.corpus_seed);
    CHECK(a.train.learning_rate == b.train.learning_rate);
    CHECK(a.train.max_epochs == b.train.max_epochs);
    CHECK(a.train.patience == b.train.patience);
    CHECK(a.grouping.super_family == b.grouping.super_family);
}

TEST_CASE("config: keys set plan fields") {
    const ExperimentPlan p = parse_config(R"(
# comment
[corpus]
per_class = 12
seed = 9

[plan]
sources = brainnet, dilation2
targets = brainnet
variants = shrunk-noaug
seeds = 3, 4

[training]
phase = two_phase
learning_rate = 0.0001
phase_epochs = 5

[attacks]
fgsm_epsilons = 0.02, 0.04
pgd = 0.03:eps_over_iters:10, 0.05:fixed:7:0.01

[output]
dir = out/here
save_adversarial_sets = true

[families]
dilation2 = dilated

[super_families]
dilated = resnet-like
)",
                                          "/base");
    CHECK(p.corpus_per_class == 12);
    CHECK(p.corpus_seed == 9);
    CHECK(p.sources == std::vector<std::string>{"brainnet", "dilation2"});
    CHECK(p.targets == std::vector<std::string>{"brainnet"});
    CHECK(p.variants == std::vector<std::string>{"shrunk-noaug"});
    CHECK(p.seeds == std::vector<std::uint64_t>{3, 4});
    CHECK(p.train.phase == PhaseMode::kTwoPhase);
    CHECK(p.train.learning_rate == 1e-4);
    CHECK(p.train.phase_epochs == 5);
    REQUIRE(p.attacks.size() == 4);
    CHECK(p.attacks[0] == fgsm_config(0.02));
    CHECK(p.attacks[1] == fgsm_config(0.04));
    CHECK(p.attacks[2] == pgd_config(0.03, AlphaSchedule::kEpsOverIters, 10));
    CHECK(p.attacks[3].alpha == 0.01);
    CHECK(p.attacks[3].iterations == 7);
    CHECK(p.output_dir == fs::path("/base/out/here"));
    CHECK(p.save_adversarial_sets);
    CHECK(p.grouping.family_of("dilation2") == "dilated");
    CHECK(p.grouping.super_family_of("dilation2") == "resnet-like");
    CHECK(p.grouping.super_family_of("brainnet") == "resnet-like");
}

TEST_CASE("config: an attacks section without fgsm_epsilons keeps the default FGSM grid") {
    const ExperimentPlan p = parse_config("[attacks]\npgd = 0.03:eps_over_4:10\n");
    REQUIRE(p.attacks.size() == 5);
    CHECK(p.attacks[4] == pgd_config(0.03, AlphaSchedule::kEpsOver4, 10));
}

TEST_CASE("config: errors carry line numbers") {
    CHECK(error_line("[plan]\nmodels = brainnet\ncolour = red\n") == 3);
    CHECK(error_text("[plan]\ncolour = red\n").find("unknown key 'colour' in [plan]") != std::string::npos);
    CHECK(error_line("\n[nosuch]\nx = 1\n") == 3);
    CHECK(error_line("x = 1\n") == 1);
    CHECK(error_line("[corpus]\nseed = 1\nseed = 2\n") == 3);
    CHECK(error_line("[corpus]\nper_class = ten\n") == 2);
    CHECK(error_line("[corpus]\nper_class = -3\n") == 2);
    CHECK(error_line("[training]\nlearning_rate = 1e-3x\n") == 2);
    CHECK(error_line("[training]\nphase = three\n") == 2);
    CHECK(error_line("[attacks]\npgd = 0.03:eps_over_4\n") == 2);
    CHECK(error_line("[attacks]\npgd = 0.03:sometimes:10\n") == 2);
    CHECK(error_line("[attacks]\npgd = 0.03:eps_over_4:10:0.1\n") == 2);
    CHECK(error_line("[families]\nnosuch = x\n") == 2);
    CHECK(error_line("[plan\n") == 1);
    CHECK(error_line("[corpus]\njust words\n") == 2);
    CHECK(error_line("[output]\nsave_adversarial_sets = maybe\n") == 2);
}

TEST_CASE("config: plan-level violations are reported") {
    CHECK(error_text("[plan]\nmodels = brainnet, nosuch\n").find("nosuch") != std::string::npos);
    CHECK(error_text("[plan]\nsources = brainnet\ntargets = dilation2\n").find("diagonal") != std::string::npos);
    CHECK(error_text("[attacks]\nfgsm_epsilons = 1.5\n").find("epsilon") != std::string::npos);
    CHECK(error_text("[corpus]\nper_class = 2\n").find("corpus_per_class") != std::string::npos);
}

TEST_CASE("config: load_config resolves paths against the file and check_paths validates them") {
    const fs::path dir = fs::temp_directory_path() / "advrobust_config_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "run.ini");
        out << "[corpus]\nimage_folder = images\n[output]\ndir = results\n";
    }
    const ExperimentPlan p = load_config(dir / "run.ini");
    CHECK(*p.image_folder == dir / "images");
    CHECK(p.output_dir == dir / "results");
    CHECK_THROWS_AS(check_paths(p), ConfigError);
    CHECK_FALSE(fs::exists(dir / "results"));
    fs::create_directories(dir / "images");
    CHECK_NOTHROW(check_paths(p));
    CHECK(fs::is_directory(dir / "results"));
    CHECK(fs::is_empty(dir / "results"));
    CHECK_THROWS_AS(load_config(dir / "missing.ini"), ConfigError);
    fs::remove_all(dir);
}
