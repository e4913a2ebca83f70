#pragma once

#include <string>
#include <vector>

#include "modfl/config.hpp"
#include "modfl/experiment.hpp"

namespace ModFL {

extern const char* const kVersion;

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);

// Parses a metrics CSV; malformed lines raise a csv error naming the line.
std::vector<MetricRow> read_metrics_csv(const std::string& path);

// Final-round accuracy per (framework, arch, cohort), one line each.
std::string render_summary(const std::vector<MetricRow>& rows);

// Accuracy-vs-round curves, one per (framework, arch, cohort) series found
// across the inputs. Pure text SVG.
std::string render_plot_svg(const std::vector<std::vector<MetricRow>>& inputs);

struct CompareDelta {
    int round = 0;
    std::string arch;
    std::string cohort;
    double a = 0.0;
    double b = 0.0;
    double delta = 0.0;  // a - b
};

struct CompareReport {
    std::vector<CompareDelta> per_round;
    std::vector<CompareDelta> final_round;
    std::string text;
};

// Joins two accuracy series on (round, arch, cohort) and reports a - b.
// The round grids must match exactly.
CompareReport compare_metrics(const std::vector<MetricRow>& a,
                              const std::vector<MetricRow>& b);

// Runs the experiment and writes metrics.csv, manifest.json, and
// summary.txt under cfg.output_dir. The manifest is written before training
// marked incomplete, then rewritten complete.
void run_to_artifacts(const ExperimentConfig& cfg, std::size_t threads);

}  // namespace ModFL
