#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "advrobust/harness.hpp"

namespace advrobust {

struct Chart {
    std::string variant;
    AttackConfig attack;
    std::string filename;  // e.g. shrunk-aug_pgd-eps_over_4_eps0.030_it10.svg
    std::string svg;
};

/// One grouped bar chart per (variant, attack config): a group per target,
/// a bar per source with height adv_acc (mean over seeds), and the target's
/// clean accuracy as a reference line. The chart's CSV rows are embedded
/// in a comment.
std::vector<Chart> render_charts(const TransferMatrix& matrix);

/// Writes the charts, summary.txt and report-manifest.json into `out_dir`
/// and returns the file names written. `source_csv` is the matrix text,
/// hashed into the manifest.
std::vector<std::string> write_report(const TransferMatrix& matrix, const std::string& source_csv,
                                      const std::filesystem::path& out_dir,
                                      const FamilyGrouping& grouping = default_grouping());

}  // namespace advrobust
