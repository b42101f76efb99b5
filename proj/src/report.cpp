#include "advrobust/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace advrobust {

namespace fs = std::filesystem;

namespace {

constexpr double kLeft = 70, kTop = 60, kPlotHeight = 300;
constexpr double kBarWidth = 14, kBarGap = 2, kGroupGap = 24, kGroupPad = 10;
constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
                                    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// XML comments may not contain "--".
std::string comment_safe(std::string s) {
    for (std::size_t p; (p = s.find("--")) != std::string::npos;) s.replace(p, 2, "- -");
    return s;
}

std::string same_attack_key(const AttackConfig& c) {
    return attack_column(c) + fmt("|%.6f", c.epsilon) + fmt("|%.6f", attack_alpha(c)) + "|" +
           std::to_string(c.kind == AttackKind::kFgsm ? 1 : c.iterations);
}

std::string chart_filename(const std::string& variant, const AttackConfig& a) {
    std::string name = variant + "_" + attack_column(a) + fmt("_eps%.3f", a.epsilon);
    if (a.kind == AttackKind::kPgd) {
        name += "_it" + std::to_string(a.iterations);
        if (a.alpha_schedule == AlphaSchedule::kFixed) name += fmt("_a%.5f", a.alpha);
    }
    return name + ".svg";
}

std::string chart_title(const std::string& variant, const AttackConfig& a) {
    if (a.kind == AttackKind::kFgsm) return variant + " | FGSM eps=" + fmt("%.2f", a.epsilon);
    return variant + " | PGD eps=" + fmt("%.2f", a.epsilon) + " alpha=" + fmt("%.4g", resolve_alpha(a)) +
           " iters=" + std::to_string(a.iterations);
}

std::string render_one(const std::string& variant, const AttackConfig& attack, const std::vector<MatrixCell>& cells,
                       const std::vector<std::string>& sources, const std::vector<std::string>& targets,
                       const std::vector<std::uint64_t>& seeds) {
    // Mean over seeds of applicable cells; with one seed this is the CSV value.
    std::map<std::pair<std::string, std::string>, std::vector<double>> adv;
    std::map<std::string, std::vector<double>> clean;
    std::map<std::string, std::set<std::uint64_t>> clean_seen;
    for (const auto& c : cells) {
        if (!c.applicable) continue;
        adv[{c.source, c.target}].push_back(c.adv_acc);
        if (clean_seen[c.target].insert(c.seed).second) clean[c.target].push_back(c.clean_acc);
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };

    const double group_w = static_cast<double>(sources.size()) * (kBarWidth + kBarGap) - kBarGap;
    const double plot_w =
        2 * kGroupPad + static_cast<double>(targets.size()) * group_w + static_cast<double>(targets.size() - 1) * kGroupGap;
    const double base_y = kTop + kPlotHeight;
    const double width = kLeft + plot_w + 210, height = base_y + 150;

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    TransferMatrix table{cells};
    std::string seed_list;
    for (auto s : seeds) seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
    os << "<!-- data (bar height = adv_acc" << (seeds.size() > 1 ? ", mean over seeds" : "") << ")\n"
       << comment_safe(table.to_csv()) << "-->\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
    os << "<text x=\"" << kLeft << "\" y=\"28\" font-size=\"14\" font-weight=\"bold\">"
       << escape(chart_title(variant, attack)) << "</text>\n";
    os << "<text x=\"" << kLeft << "\" y=\"46\">accuracy on the attack split; seeds " << escape(seed_list)
       << "; line = clean accuracy</text>\n";

    // Axes and gridlines.
    for (int t = 0; t <= 5; ++t) {
        const double v = t / 5.0, y = base_y - v * kPlotHeight;
        os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft + plot_w << "\" y1=\"" << y << "\" y2=\"" << y
           << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt("%.1f", v)
           << "</text>\n";
    }
    os << "<line x1=\"" << kLeft << "\" x2=\"" << kLeft << "\" y1=\"" << kTop << "\" y2=\"" << base_y
       << "\" stroke=\"#333333\"/>\n";
    os << "<text transform=\"translate(20 " << kTop + kPlotHeight / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << "accuracy</text>\n";

    // Bars live in accuracy units: y grows upward and one unit is the plot height.
    os << "<g class=\"bars\" transform=\"translate(0 " << base_y << ") scale(1 -" << kPlotHeight << ")\">\n";
    for (std::size_t g = 0; g < targets.size(); ++g) {
        const double gx = kLeft + kGroupPad + static_cast<double>(g) * (group_w + kGroupGap);
        for (std::size_t b = 0; b < sources.size(); ++b) {
            const auto it = adv.find({sources[b], targets[g]});
            if (it == adv.end()) continue;
            const std::string h = fmt("%.6f", mean(it->second));
            const double x = gx + static_cast<double>(b) * (kBarWidth + kBarGap);
            os << "<rect class=\"bar\" x=\"" << x << "\" y=\"0\" width=\"" << kBarWidth << "\" height=\"" << h
               << "\" fill=\"" << kPalette[b % std::size(kPalette)] << "\" data-source=\"" << escape(sources[b])
               << "\" data-target=\"" << escape(targets[g]) << "\" data-adv=\"" << h << "\"><title>"
               << escape(sources[b] + " -> " + targets[g] + ": " + h) << "</title></rect>\n";
        }
        if (auto c = clean.find(targets[g]); c != clean.end()) {
            const std::string v = fmt("%.6f", mean(c->second));
            os << "<line class=\"clean\" x1=\"" << gx - 4 << "\" x2=\"" << gx + group_w + 4 << "\" y1=\"" << v
               << "\" y2=\"" << v << "\" stroke=\"#000000\" stroke-width=\"1.5\" vector-effect=\"non-scaling-stroke\""
               << " data-target=\"" << escape(targets[g]) << "\" data-clean=\"" << v << "\"/>\n";
        }
    }
    os << "</g>\n";

    for (std::size_t g = 0; g < targets.size(); ++g) {
        const double gx = kLeft + kGroupPad + static_cast<double>(g) * (group_w + kGroupGap);
        os << "<text class=\"group\" transform=\"translate(" << gx + group_w / 2 << " " << base_y + 14
           << ") rotate(-30)\" text-anchor=\"end\">" << escape(targets[g]) << "</text>\n";
        if (!clean.count(targets[g]))
            os << "<text x=\"" << gx + group_w / 2 << "\" y=\"" << base_y - 6 << "\" text-anchor=\"middle\">n/a</text>\n";
    }
    os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << base_y + 140 << "\" text-anchor=\"middle\">"
       << "target model (bars: source model)</text>\n";

    const double lx = kLeft + plot_w + 20;
    os << "<text x=\"" << lx << "\" y=\"" << kTop << "\" font-weight=\"bold\">source</text>\n";
    for (std::size_t b = 0; b < sources.size(); ++b) {
        const double y = kTop + 12 + static_cast<double>(b) * 18;
        os << "<rect x=\"" << lx << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\""
           << kPalette[b % std::size(kPalette)] << "\"/>\n";
        os << "<text x=\"" << lx + 18 << "\" y=\"" << y + 10 << "\">" << escape(sources[b]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace

std::vector<Chart> render_charts(const TransferMatrix& matrix) {
    const auto sources = matrix.sources();
    const auto targets = matrix.targets();
    const auto seeds = matrix.seeds();
    std::vector<Chart> charts;
    for (const auto& variant : matrix.variants())
        for (const auto& attack : matrix.attacks()) {
            const std::string key = same_attack_key(attack);
            std::vector<MatrixCell> cells;
            for (const auto& c : matrix.cells)
                if (c.variant == variant && same_attack_key(c.attack) == key) cells.push_back(c);
            if (cells.empty()) continue;
            charts.push_back({variant, attack, chart_filename(variant, attack),
                              render_one(variant, attack, cells, sources, targets, seeds)});
        }
    return charts;
}

std::vector<std::string> write_report(const TransferMatrix& matrix, const std::string& source_csv,
                                      const fs::path& out_dir, const FamilyGrouping& grouping) {
    // Everything is rendered before the first write so a failure leaves no files.
    const std::string summary = format_summary(summarize(matrix, grouping));
    const auto charts = render_charts(matrix);

    std::map<std::string, std::string> outputs;
    for (const auto& c : charts) outputs[c.filename] = c.svg;
    outputs["summary.txt"] = summary;

    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : source_csv) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    nlohmann::ordered_json j;
    j["format"] = "advrobust-report-manifest";
    j["version"] = 1;
    j["code_version"] = kCodeVersion;
    j["matrix_fnv1a64"] = hex64(h);
    j["evaluation_split"] = "attack";
    auto list = nlohmann::ordered_json::array();
    for (const auto& c : charts) {
        nlohmann::ordered_json e;
        e["file"] = c.filename;
        e["variant"] = c.variant;
        e["attack"] = attack_label(c.attack);
        e["epsilon"] = c.attack.epsilon;
        e["alpha"] = attack_alpha(c.attack);
        list.push_back(e);
    }
    j["charts"] = list;
    std::vector<std::string> files;
    for (const auto& [name, _] : outputs) files.push_back(name);
    files.push_back("report-manifest.json");
    std::sort(files.begin(), files.end());
    j["files"] = files;
    outputs["report-manifest.json"] = j.dump(2) + "\n";

    fs::create_directories(out_dir);
    for (const auto& [name, text] : outputs) {
        std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + (out_dir / name).string());
        out << text;
        if (!out) throw std::runtime_error("failed writing " + (out_dir / name).string());
    }
    return files;
}

}  // namespace advrobust
