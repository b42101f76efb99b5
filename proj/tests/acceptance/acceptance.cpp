// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
// Criteria 5-8 and 11 share one run of the default plan (plus a fresh rerun
// for byte identity), so the whole binary takes a few minutes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "advrobust/harness.hpp"
#include "advrobust/ops.hpp"
#include "advrobust/rng.hpp"
#include "support/logistic_toy.hpp"
#include "support/oracles.hpp"

using namespace advrobust;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[1024];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

Tensor uniform_tensor(Shape shape, std::uint64_t seed, double lo, double hi) {
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

Outcome alpha_schedules() {
    const double a = resolve_alpha(pgd_config(0.03, AlphaSchedule::kEpsOver4, 10));
    const double b = resolve_alpha(pgd_config(0.03, AlphaSchedule::kEpsOverIters, 10));
    const double c = resolve_alpha(pgd_config(0.03, AlphaSchedule::kEpsOverIters, 20));
    const bool ok = a == 0.03 / 4 && b == 0.03 / 10 && c == 0.03 / 20 && std::abs(a - 0.0075) < 1e-15 &&
                    std::abs(b - 0.003) < 1e-15 && std::abs(c - 0.0015) < 1e-15;
    return {ok, fmt("alpha = %.10g, %.10g, %.10g", a, b, c)};
}

Outcome epsilon_scale() {
    const long levels = std::lround(0.04 * 255);
    return {levels == 10, fmt("round(0.04 * 255) = %ld", levels)};
}

Outcome gradient_fidelity() {
    double worst = 0.0;
    std::string worst_at;
    std::size_t checks = 0;
    for (const auto& name : registry_names())
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            Model m = Model::build(*registry_find(name, 8), derive_seed(seed, 77));
            m.set_trainable(false);
            Tensor x = uniform_tensor(Shape{1, 3, 8, 8}, derive_seed(seed, 78), 0.0, 1.0);
            const std::vector<int> label{static_cast<int>(seed % 3)};
            x.set_requires_grad(true);
            Tape tape;
            tape.backward(softmax_cross_entropy(m.forward(x, &tape), label, Reduction::kSum, &tape));
            const std::vector<double> analytic(x.grad().begin(), x.grad().end());
            const auto numeric = testing::numeric_gradient(
                x, [&] { return softmax_cross_entropy(m.forward(x), label, Reduction::kSum).item(); }, 1e-5);
            const double err = testing::max_relative_error(analytic, numeric);
            if (err > worst) {
                worst = err;
                worst_at = name + " seed " + std::to_string(seed);
            }
            ++checks;
        }
    return {worst < 1e-4, fmt("%zu model/seed probes, worst relative error %.3g (%s)", checks, worst, worst_at.c_str())};
}

Outcome conv_oracle() {
    double worst = 0.0;
    std::size_t cases = 0;
    std::uint64_t seed = 500;
    for (std::size_t stride : {1u, 2u})
        for (std::size_t dilation : {1u, 2u, 3u, 4u})
            for (std::size_t groups : {1u, 2u, 4u})
                for (std::size_t padding : {std::size_t{0}, dilation}) {
                    const Conv2dOptions opt{stride, dilation, groups, padding};
                    const Tensor x = uniform_tensor(Shape{2, 8, 13, 11}, ++seed, -1, 1);
                    const Tensor w = uniform_tensor(Shape{8, 8 / groups, 3, 3}, ++seed, -1, 1);
                    const Tensor b = uniform_tensor(Shape{8}, ++seed, -1, 1);
                    const Tensor y = conv2d(x, w, b, opt);
                    const Tensor ref = testing::direct_conv2d(x, w, b, opt);
                    if (y.shape() != ref.shape()) return {false, "shape mismatch at stride " + std::to_string(stride)};
                    for (std::size_t i = 0; i < y.numel(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]));
                    ++cases;
                }
    return {worst < 1e-10, fmt("%zu settings over stride {1,2} x dilation {1..4} x groups {1,2,4}, max |diff| %.3g",
                               cases, worst)};
}

Outcome convex_toy() {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const testing::LogisticToy toy = testing::LogisticToy::random(seed);
        const double eps = 0.03;
        const Tensor p = pgd(toy.gradient(), toy.input(), std::vector<int>{toy.label},
                             pgd_config(eps, AlphaSchedule::kEpsOver4, 10, seed));
        worst = std::max(worst, std::abs(toy.grid_maximum(eps) - toy.loss(p)));
    }
    return {worst < 1e-3, fmt("5 instances, eps 0.03, worst gap to grid optimum %.3g", worst)};
}

DatasetVariant toy_variant(std::size_t per_class, std::uint64_t seed) {
    DatasetVariant v;
    v.name = "toy";
    v.resolution = Resolution::kShrunk;
    v.seed = seed;
    std::vector<int> labels;
    Rng rng(seed);
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            Tensor t(Shape{3, 20, 20});
            for (std::size_t ch = 0; ch < 3; ++ch)
                for (std::size_t k = 0; k < 400; ++k)
                    t[ch * 400 + k] = std::clamp((static_cast<int>(ch) == c ? 0.7 : 0.3) + rng.normal(0.0, 0.05), 0.0, 1.0);
            v.images.push_back({t, c});
            labels.push_back(c);
        }
    v.splits = stratified_splits(labels, seed);
    return v;
}

Outcome training_protocol() {
    const DatasetVariant v = toy_variant(10, 1);
    TrainConfig c;
    c.learning_rate = 1e-2;
    c.max_epochs = 40;
    c.seed = 5;

    // Scripted validation losses worsen after epoch 1.
    Model m = Model::build(*registry_find("densenet_surrogate", 20), 4);
    TrainHooks hooks;
    hooks.val_loss_override = [](std::size_t epoch, double) { return 1.0 + static_cast<double>(epoch); };
    const TrainReport r1 = train(m, v, c, hooks);
    const bool stop_ok = r1.best_epoch == 1 && r1.stopped_epoch == r1.best_epoch + 6 && c.patience == 6;

    // Two-phase: frozen prefix bit-unchanged through phase 1, then lr / 10.
    Model m2 = Model::build(*registry_find("brainnet", 20), 6);
    const auto initial = m2.state_snapshot();
    TrainConfig c2 = c;
    c2.phase = PhaseMode::kTwoPhase;
    c2.phase_epochs = 3;
    std::vector<std::vector<double>> end_phase1;
    std::vector<double> rates[2];
    TrainHooks h2;
    h2.on_epoch = [&](const EpochRecord& e) {
        if (e.phase == 1) end_phase1 = m2.state_snapshot();
        rates[e.phase - 1].push_back(e.learning_rate);
    };
    const TrainReport r2 = train(m2, v, c2, h2);
    const std::size_t frozen = r2.phase1_frozen_prefix;
    bool frozen_ok = frozen > 0 && !end_phase1.empty();
    for (std::size_t i = 0; frozen_ok && i < frozen; ++i) frozen_ok = end_phase1[i] == initial[i];
    bool lr_ok = !rates[0].empty() && !rates[1].empty();
    for (double r : rates[0]) lr_ok &= r == c2.learning_rate;
    for (double r : rates[1]) lr_ok &= r == c2.learning_rate / 10.0;
    return {stop_ok && frozen_ok && lr_ok,
            fmt("stopped at epoch %zu (best %zu, patience 6); %zu frozen tensors %s; phase-2 lr %g = %g / 10",
                r1.stopped_epoch, r1.best_epoch, frozen, frozen_ok ? "bit-unchanged" : "CHANGED",
                rates[1].empty() ? 0.0 : rates[1].front(), c2.learning_rate)};
}

struct WhiteBox {
    double clean = 0.0;
    std::map<double, double> pgd;  // eps -> accuracy under PGD(eps/4, 10)
};

struct MatrixChecks {
    std::size_t examples = 0, violations = 0, fgsm_sets = 0, pgd_sets = 0;
    double worst_excess = -1.0;
    std::map<std::pair<std::string, std::string>, WhiteBox> white;  // (variant, model)
};

void check_set(const AdversarialSet& set, const Tensor& clean, MatrixChecks& mc) {
    (set.config.kind == AttackKind::kFgsm ? mc.fgsm_sets : mc.pgd_sets)++;
    const std::size_t n = set.size(), per = set.examples.numel() / std::max<std::size_t>(n, 1);
    for (std::size_t e = 0; e < n; ++e) {
        double linf = 0.0;
        bool in_range = true;
        for (std::size_t k = e * per; k < (e + 1) * per; ++k) {
            linf = std::max(linf, std::abs(set.examples[k] - clean[k]));
            in_range &= set.examples[k] >= 0.0 && set.examples[k] <= 1.0;
        }
        mc.worst_excess = std::max(mc.worst_excess, linf - set.config.epsilon);
        ++mc.examples;
        if (linf > set.config.epsilon + 1e-12 || !in_range) ++mc.violations;
    }
}

struct RunOutcome {
    RunResult result;
    double seconds = 0.0;
};

RunOutcome run_default(const fs::path& dir, MatrixChecks* mc, std::FILE* log) {
    ExperimentPlan plan = default_plan();
    plan.output_dir = dir;
    fs::remove_all(dir);
    RunHooks hooks;
    hooks.log = [&](const std::string& m) {
        std::fprintf(log, "  %s\n", m.c_str());
        std::fflush(log);
    };
    if (mc) {
        hooks.on_adversarial_set = [mc](const AdversarialSet& set, const Batch& clean) {
            check_set(set, clean.images, *mc);
        };
        hooks.on_model_ready = [mc](const std::string& variant, std::uint64_t seed, const std::string& name,
                                    const Model& model, const DatasetVariant& v) {
            WhiteBox& wb = mc->white[{variant, name}];
            const Batch clean = gather(v, v.splits.attack);
            wb.clean = evaluate_accuracy(model, clean);
            std::uint64_t k = 0;
            for (double eps : {0.02, 0.03, 0.04, 0.05}) {
                const AttackConfig cfg =
                    pgd_config(eps, AlphaSchedule::kEpsOver4, 10, derive_seed(model_seed(seed, name), 1000 + k++));
                const AdversarialSet set = generate_adversarial_set(model, v, cfg);
                check_set(set, clean.images, *mc);
                wb.pgd[eps] = evaluate_accuracy(model, set.examples, set.labels);
            }
        };
    }
    const auto t0 = Clock::now();
    RunOutcome out{run_plan(plan, hooks), 0.0};
    out.seconds = seconds_since(t0);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string work = "acceptance";
    app.add_option("--work", work, "scratch directory for the default-plan runs");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);
    const fs::path report_path = fs::path(work) / "acceptance_report.txt";
    std::ofstream report(report_path);

    std::map<int, Outcome> results;
    auto record = [&](int id, const std::string& title, Outcome o, double secs) {
        const std::string line = fmt("criterion %2d %-28s %s (%.1f s): %s", id, title.c_str(),
                                     o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
        report << line << "\n";
        results[id] = std::move(o);
    };
    auto timed = [&](int id, const std::string& title, const std::function<Outcome()>& f) {
        const auto t0 = Clock::now();
        Outcome o = f();
        record(id, title, std::move(o), seconds_since(t0));
    };

    timed(1, "alpha schedules", alpha_schedules);
    timed(2, "epsilon scale", epsilon_scale);
    timed(3, "gradient fidelity", gradient_fidelity);
    timed(4, "convolution oracle", conv_oracle);
    timed(9, "convex-toy PGD optimality", convex_toy);
    timed(10, "training protocol", training_protocol);

    std::printf("running the default plan (8 models x 3 variants x 7 attack configs)...\n");
    std::fflush(stdout);
    MatrixChecks mc;
    const RunOutcome first = run_default(fs::path(work) / "run_a", &mc, stderr);
    const TransferMatrix& matrix = first.result.matrix;

    {
        const bool ok = mc.violations == 0 && mc.fgsm_sets > 0 && mc.pgd_sets > 0;
        record(5, "attack constraints",
               {ok, fmt("%zu examples from %zu FGSM and %zu PGD sets, %zu violations, max (linf - eps) %.3g",
                        mc.examples, mc.fgsm_sets, mc.pgd_sets, mc.violations, mc.worst_excess)},
               first.seconds);
    }

    {
        std::string detail, failures, unqualified;
        std::size_t qualified = 0, passed = 0;
        double smallest = 1.0;
        for (const auto& [key, wb] : mc.white) {
            const double drop = wb.clean - wb.pgd.at(0.03);
            const std::string id = key.first + "/" + key.second;
            report << fmt("  c6 %-34s clean %.3f pgd(0.03, eps/4, 10) %.3f drop %.3f\n", id.c_str(), wb.clean,
                          wb.pgd.at(0.03), drop);
            if (wb.clean < 0.90) {
                unqualified += " " + id + fmt("(%.3f)", wb.clean);
                continue;
            }
            ++qualified;
            smallest = std::min(smallest, drop);
            if (drop >= 0.20)
                ++passed;
            else
                failures += " " + id + fmt("(%.3f)", drop);
        }
        detail = fmt("%zu/%zu qualified models drop >= 20 pp, smallest drop %.3f", passed, qualified, smallest);
        if (!unqualified.empty()) detail += "; below 90% clean:" + unqualified;
        if (!failures.empty()) detail += "; failing:" + failures;
        record(6, "white-box effectiveness", {qualified > 0 && passed == qualified, detail}, 0.0);
    }

    {
        // FGSM white-box accuracy comes from the matrix diagonal.
        std::map<std::pair<std::string, double>, std::vector<double>> fgsm, pgdv;
        for (const auto& c : matrix.cells)
            if (c.source == c.target && c.attack.kind == AttackKind::kFgsm && c.applicable)
                fgsm[{c.source, c.attack.epsilon}].push_back(c.adv_acc);
        for (const auto& [key, wb] : mc.white)
            for (const auto& [eps, acc] : wb.pgd) pgdv[{key.second, eps}].push_back(acc);
        auto mean = [](const std::vector<double>& v) {
            double s = 0.0;
            for (double x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        std::size_t checked = 0, failed = 0;
        double worst = -1.0;
        std::string failures;
        for (const auto& [key, accs] : pgdv) {
            const auto f = fgsm.find(key);
            if (f == fgsm.end()) {
                ++failed;
                failures += " " + key.first + fmt("@%.2f(missing FGSM)", key.second);
                continue;
            }
            const double gap = mean(accs) - mean(f->second);
            report << fmt("  c7 %-20s eps %.2f mean pgd %.3f mean fgsm %.3f\n", key.first.c_str(), key.second,
                          mean(accs), mean(f->second));
            worst = std::max(worst, gap);
            ++checked;
            if (gap > 0.02) {
                ++failed;
                failures += " " + key.first + fmt("@%.2f(+%.3f)", key.second, gap);
            }
        }
        record(7, "PGD >= FGSM",
               {checked == 32 && failed == 0,
                fmt("%zu (model, eps) pairs, largest mean(PGD) - mean(FGSM) %.3f%s", checked, worst,
                    failures.empty() ? "" : ("; failing:" + failures).c_str())},
               0.0);
    }

    {
        const ExperimentPlan plan = default_plan();
        const std::size_t expected =
            plan.variants.size() * plan.seeds.size() * plan.attacks.size() * plan.sources.size() * plan.targets.size();
        std::size_t missing_in_resolution = 0;
        for (const auto& c : matrix.cells) missing_in_resolution += !c.applicable;
        bool complete = matrix.cells.size() == expected && missing_in_resolution == 0;
        try {
            summarize(matrix);
        } catch (const std::exception&) {
            complete = false;
        }
        std::printf("rerunning the default plan from scratch for byte identity...\n");
        std::fflush(stdout);
        const RunOutcome second = run_default(fs::path(work) / "run_b", nullptr, stderr);
        const fs::path a = fs::path(work) / "run_a", b = fs::path(work) / "run_b";
        const bool same_csv = slurp(a / "matrix.csv") == slurp(b / "matrix.csv");
        const bool same_manifest = slurp(a / "manifest.json") == slurp(b / "manifest.json");
        const bool fast = first.seconds < 1800.0;
        record(8, "end-to-end matrix",
               {complete && same_csv && same_manifest && fast,
                fmt("%zu/%zu cells, %zu n/a, %zu adversarial sets; run %.0f s (limit 1800); rerun %.0f s, "
                    "matrix.csv %s, manifest %s",
                    matrix.cells.size(), expected, missing_in_resolution, first.result.generations, first.seconds,
                    second.seconds, same_csv ? "byte-identical" : "DIFFERS",
                    same_manifest ? "byte-identical" : "DIFFERS")},
               first.seconds + second.seconds);
    }

    {
        const Summary s = summarize(matrix);
        const TrendReport& t = s.trend;
        auto yn = [](const std::optional<bool>& b) { return b ? (*b ? "yes" : "no") : "n/a"; };
        std::string by_variant;
        for (const auto& [v, d] : t.black_box_drop_by_variant) by_variant += fmt(" %s %.3f", v.c_str(), d);
        const std::string detail =
            fmt("within-family drop %.3f vs cross-family %.3f (within exceeds: %s); black-box drop by variant:%s; "
                "shrunk-aug > full-aug: %s; shrunk-noaug > shrunk-aug: %s; FGSM monotonicity deviations: %zu",
                t.within_family_drop.value_or(NAN), t.cross_family_drop.value_or(NAN), yn(t.within_exceeds_cross),
                by_variant.c_str(), yn(t.shrunk_aug_exceeds_full_aug), yn(t.shrunk_noaug_exceeds_shrunk_aug),
                t.monotonicity_deviations.size());
        record(11, "trend report (informational)", {true, detail}, 0.0);
        std::ofstream(fs::path(work) / "summary.txt") << format_summary(s);
    }

    std::size_t failed = 0;
    for (const auto& [id, o] : results) failed += !o.pass;
    const std::string tail = fmt("%zu/%zu criteria passed; details in %s", results.size() - failed, results.size(),
                                 report_path.string().c_str());
    std::printf("%s\n", tail.c_str());
    report << tail << "\n";
    return failed == 0 ? 0 : 1;
}
