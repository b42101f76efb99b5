#include "advrobust/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace advrobust {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value, char sep = ',') {
    std::vector<std::string> out;
    if (trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

bool valid_key(const std::string& k) {
    return !k.empty() && std::all_of(k.begin(), k.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-' || c == '.';
    });
}

struct Line {
    std::size_t number;
    std::string value;
};

std::uint64_t to_u64(const Line& l, const std::string& text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [p, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc() || p != end)
        throw ConfigError("expected a non-negative integer, got '" + text + "'", l.number);
    return v;
}

double to_double(const Line& l, const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [p, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc() || p != end || !std::isfinite(v))
        throw ConfigError("expected a number, got '" + text + "'", l.number);
    return v;
}

bool to_bool(const Line& l) {
    if (l.value == "true" || l.value == "yes" || l.value == "1") return true;
    if (l.value == "false" || l.value == "no" || l.value == "0") return false;
    throw ConfigError("expected true or false, got '" + l.value + "'", l.number);
}

std::vector<std::string> to_names(const Line& l) {
    auto names = split_list(l.value);
    for (const auto& n : names)
        if (!valid_key(n)) throw ConfigError("bad name '" + n + "' in list", l.number);
    return names;
}

// "eps:schedule:iterations" or "eps:fixed:iterations:alpha".
AttackConfig to_pgd(const Line& l, const std::string& item) {
    const auto parts = split_list(item, ':');
    if (parts.size() != 3 && parts.size() != 4)
        throw ConfigError("PGD entry '" + item + "' is not eps:schedule:iterations[:alpha]", l.number);
    AlphaSchedule schedule;
    try {
        schedule = alpha_schedule_from_string(parts[1]);
    } catch (const std::invalid_argument&) {
        throw ConfigError("unknown alpha schedule '" + parts[1] + "'", l.number);
    }
    if ((schedule == AlphaSchedule::kFixed) != (parts.size() == 4))
        throw ConfigError("PGD entry '" + item + "': an explicit alpha goes with the fixed schedule only", l.number);
    AttackConfig c = pgd_config(to_double(l, parts[0]), schedule, to_u64(l, parts[2]));
    if (parts.size() == 4) c.alpha = to_double(l, parts[3]);
    return c;
}

fs::path resolve(const fs::path& base, const std::string& value) {
    const fs::path p(value);
    return p.is_absolute() ? p : base / p;
}

}  // namespace

ExperimentPlan parse_config(const std::string& text, const fs::path& base_dir) {
    std::map<std::string, std::map<std::string, Line>> sections;
    std::string current;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        const std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section header", lineno);
            current = trim(line.substr(1, line.size() - 2));
            if (!valid_key(current)) throw ConfigError("bad section name '" + current + "'", lineno);
            if (sections.count(current)) throw ConfigError("section [" + current + "] repeated", lineno);
            sections[current];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("expected 'key = value' or '[section]'", lineno);
        if (current.empty()) throw ConfigError("key outside any section", lineno);
        const std::string key = trim(line.substr(0, eq));
        if (!valid_key(key)) throw ConfigError("bad key '" + key + "'", lineno);
        auto& sec = sections[current];
        if (sec.count(key)) throw ConfigError("key '" + key + "' repeated in [" + current + "]", lineno);
        sec.emplace(key, Line{lineno, trim(line.substr(eq + 1))});
    }

    ExperimentPlan plan = default_plan();
    using Setter = std::function<void(const Line&)>;
    const std::map<std::string, std::map<std::string, Setter>> schema = {
        {"corpus",
         {{"per_class", [&](const Line& l) { plan.corpus_per_class = to_u64(l, l.value); }},
          {"seed", [&](const Line& l) { plan.corpus_seed = to_u64(l, l.value); }},
          {"image_folder", [&](const Line& l) {
               if (l.value.empty()) throw ConfigError("image_folder is empty", l.number);
               plan.image_folder = resolve(base_dir, l.value);
           }}}},
        {"plan",
         {{"models", [&](const Line& l) { plan.sources = plan.targets = to_names(l); }},
          {"sources", [&](const Line& l) { plan.sources = to_names(l); }},
          {"targets", [&](const Line& l) { plan.targets = to_names(l); }},
          {"variants", [&](const Line& l) { plan.variants = to_names(l); }},
          {"seeds", [&](const Line& l) {
               plan.seeds.clear();
               for (const auto& s : split_list(l.value)) plan.seeds.push_back(to_u64(l, s));
           }}}},
        {"training",
         {{"learning_rate", [&](const Line& l) { plan.train.learning_rate = to_double(l, l.value); }},
          {"batch_size", [&](const Line& l) { plan.train.batch_size = to_u64(l, l.value); }},
          {"max_epochs", [&](const Line& l) { plan.train.max_epochs = to_u64(l, l.value); }},
          {"phase_epochs", [&](const Line& l) { plan.train.phase_epochs = to_u64(l, l.value); }},
          {"patience", [&](const Line& l) { plan.train.patience = to_u64(l, l.value); }},
          {"phase2_lr_divisor", [&](const Line& l) { plan.train.phase2_lr_divisor = to_double(l, l.value); }},
          {"phase", [&](const Line& l) {
               if (l.value == "single")
                   plan.train.phase = PhaseMode::kSingle;
               else if (l.value == "two_phase")
                   plan.train.phase = PhaseMode::kTwoPhase;
               else
                   throw ConfigError("phase must be single or two_phase", l.number);
           }}}},
        {"attacks", {{"fgsm_epsilons", [](const Line&) {}}, {"pgd", [](const Line&) {}}}},
        {"output",
         {{"dir", [&](const Line& l) {
               if (l.value.empty()) throw ConfigError("output dir is empty", l.number);
               plan.output_dir = resolve(base_dir, l.value);
           }},
          {"save_adversarial_sets", [&](const Line& l) { plan.save_adversarial_sets = to_bool(l); }},
          {"train_missing", [&](const Line& l) { plan.train_missing = to_bool(l); }}}},
    };

    const auto known = registry_names();
    for (const auto& [name, keys] : sections) {
        if (name == "families") {
            for (const auto& [model, l] : keys) {
                if (std::find(known.begin(), known.end(), model) == known.end())
                    throw ConfigError("[families] names unknown model '" + model + "'", l.number);
                if (!valid_key(l.value)) throw ConfigError("bad family name '" + l.value + "'", l.number);
                plan.grouping.family[model] = l.value;
            }
            continue;
        }
        if (name == "super_families") {
            for (const auto& [family, l] : keys) {
                if (!valid_key(l.value)) throw ConfigError("bad super-family name '" + l.value + "'", l.number);
                plan.grouping.super_family[family] = l.value;
            }
            continue;
        }
        const auto sec = schema.find(name);
        if (sec == schema.end()) {
            const std::size_t at = keys.empty() ? 0 : keys.begin()->second.number;
            throw ConfigError("unknown section [" + name + "]", at);
        }
        for (const auto& [key, l] : keys) {
            const auto setter = sec->second.find(key);
            if (setter == sec->second.end()) throw ConfigError("unknown key '" + key + "' in [" + name + "]", l.number);
            setter->second(l);
        }
    }

    if (auto it = sections.find("attacks"); it != sections.end()) {
        const auto& keys = it->second;
        std::vector<AttackConfig> grid;
        if (auto f = keys.find("fgsm_epsilons"); f != keys.end()) {
            for (const auto& e : split_list(f->second.value)) grid.push_back(fgsm_config(to_double(f->second, e)));
        } else {
            for (const auto& a : default_attack_grid())
                if (a.kind == AttackKind::kFgsm) grid.push_back(a);
        }
        if (auto p = keys.find("pgd"); p != keys.end()) {
            for (const auto& e : split_list(p->second.value)) grid.push_back(to_pgd(p->second, e));
        } else {
            for (const auto& a : default_attack_grid())
                if (a.kind == AttackKind::kPgd) grid.push_back(a);
        }
        plan.attacks = grid;
    }

    try {
        validate(plan);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return plan;
}

ExperimentPlan load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    try {
        return parse_config(os.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void check_paths(const ExperimentPlan& plan) {
    if (plan.image_folder && !fs::is_directory(*plan.image_folder))
        throw ConfigError("image folder " + plan.image_folder->string() + " is not a directory");
    std::error_code ec;
    fs::create_directories(plan.output_dir, ec);
    if (ec || !fs::is_directory(plan.output_dir))
        throw ConfigError("cannot create output directory " + plan.output_dir.string());
    const fs::path probe = plan.output_dir / ".write-probe";
    {
        std::ofstream out(probe);
        if (!out) throw ConfigError("output directory " + plan.output_dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
}

std::string default_config_text() {
    const ExperimentPlan p = default_plan();
    auto join = [](const std::vector<std::string>& v) {
        std::string s;
        for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
        return s;
    };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v);
        return std::string(buf);
    };
    std::string fgsm, pgd;
    for (const auto& a : p.attacks) {
        if (a.kind == AttackKind::kFgsm) {
            fgsm += (fgsm.empty() ? "" : ", ") + num(a.epsilon);
        } else {
            pgd += (pgd.empty() ? "" : ", ") + num(a.epsilon) + ":" + to_string(a.alpha_schedule) + ":" +
                   std::to_string(a.iterations);
        }
    }
    std::ostringstream os;
    os << "# advrobust run configuration\n\n"
       << "[corpus]\nper_class = " << p.corpus_per_class << "\nseed = " << p.corpus_seed << "\n\n"
       << "[plan]\nmodels = " << join(p.sources) << "\nvariants = " << join(p.variants) << "\nseeds = 0\n\n"
       << "[training]\nphase = single\nlearning_rate = " << num(p.train.learning_rate)
       << "\nbatch_size = " << p.train.batch_size << "\nmax_epochs = " << p.train.max_epochs
       << "\nphase_epochs = " << p.train.phase_epochs << "\npatience = " << p.train.patience
       << "\nphase2_lr_divisor = " << num(p.train.phase2_lr_divisor) << "\n\n"
       << "[attacks]\nfgsm_epsilons = " << fgsm << "\npgd = " << pgd << "\n\n"
       << "[output]\ndir = " << p.output_dir.generic_string() << "\nsave_adversarial_sets = false\n\n"
       << "[super_families]\nbrainnet = resnet-like\ndilation = resnet-like\n";
    return os.str();
}

}  // namespace advrobust
