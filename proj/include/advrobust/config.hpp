#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "advrobust/harness.hpp"

namespace advrobust {

/// Configuration problem; `line` is 0 when the error is not tied to a line.
class ConfigError : public std::runtime_error {
  public:
    ConfigError(const std::string& message, std::size_t line = 0)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

/// Parses the sectioned key = value format described in docs/config.md.
/// Keys absent from the text keep their default_plan() values; relative
/// paths resolve against `base_dir`.
ExperimentPlan parse_config(const std::string& text, const std::filesystem::path& base_dir = ".");

ExperimentPlan load_config(const std::filesystem::path& path);

/// Checks the image folder and that the output directory can be created
/// and written, before any training starts.
void check_paths(const ExperimentPlan& plan);

/// The default plan written out in the config format.
std::string default_config_text();

}  // namespace advrobust
