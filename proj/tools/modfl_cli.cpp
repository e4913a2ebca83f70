#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "modfl.h"

namespace {

int report_failure(modfl_status status) {
    std::fprintf(stderr, "error: %s\n", modfl_last_error());
    return static_cast<int>(status);
}

struct ConfigHandle {
    modfl_config* cfg = nullptr;
    ~ConfigHandle() { modfl_config_free(cfg); }
};

struct StringHandle {
    char* s = nullptr;
    ~StringHandle() { modfl_string_free(s); }
};

int load_config(const std::string& path, const std::string& out_dir,
                const std::string& seed, ConfigHandle& handle) {
    std::vector<std::string> overrides;
    if (!out_dir.empty()) overrides.push_back("output_dir=" + out_dir);
    if (!seed.empty()) overrides.push_back("seed=" + seed);
    std::vector<const char*> raw;
    for (const std::string& o : overrides) raw.push_back(o.c_str());
    modfl_status status = modfl_config_load(path.c_str(), raw.data(), raw.size(), &handle.cfg);
    if (status != MODFL_OK) return report_failure(status);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"federated-learning simulation engine"};
    app.require_subcommand(1);

    std::string config_path, out_path, seed_override;
    std::size_t threads = 1;

    CLI::App* run = app.add_subcommand("run", "train per the config and write artifacts");
    run->add_option("--config", config_path, "experiment config file")->required();
    run->add_option("--out", out_path, "override output_dir");
    run->add_option("--seed", seed_override, "override the config seed");
    run->add_option("--threads", threads, "parallel client updates")->default_val(1);

    CLI::App* plot = app.add_subcommand("plot", "render accuracy curves from metrics CSVs");
    std::vector<std::string> csv_paths;
    std::string svg_out = "plot.svg";
    plot->add_option("csv", csv_paths, "metrics CSV files")->required()->expected(-1);
    plot->add_option("--out", svg_out, "output SVG path")->capture_default_str();

    CLI::App* compare = app.add_subcommand("compare", "accuracy deltas between two runs");
    std::string csv_a, csv_b;
    compare->add_option("a", csv_a, "first metrics CSV")->required();
    compare->add_option("b", csv_b, "second metrics CSV")->required();

    CLI::App* check = app.add_subcommand("check-grad", "finite-difference gradient check");
    std::uint64_t gc_seed = 42;
    std::size_t gc_instances = 60;
    check->add_option("--seed", gc_seed, "random seed")->capture_default_str();
    check->add_option("--instances", gc_instances, "instances to test")->capture_default_str();

    CLI::App* partition = app.add_subcommand("partition", "print the client partition");
    std::string part_config;
    bool dry_run = false;
    partition->add_option("--config", part_config, "experiment config file")->required();
    partition->add_flag("--dry-run", dry_run, "describe the partition without training");

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        ConfigHandle handle;
        if (int rc = load_config(config_path, out_path, seed_override, handle)) return rc;
        modfl_status status = modfl_run(handle.cfg, threads);
        if (status != MODFL_OK) return report_failure(status);
        StringHandle serialized;
        if (modfl_config_serialize(handle.cfg, &serialized.s) == MODFL_OK) {
            std::printf("run complete\n%s", serialized.s);
        }
        return 0;
    }
    if (plot->parsed()) {
        std::vector<const char*> raw;
        for (const std::string& p : csv_paths) raw.push_back(p.c_str());
        modfl_status status = modfl_plot(raw.data(), raw.size(), svg_out.c_str());
        if (status != MODFL_OK) return report_failure(status);
        std::printf("wrote %s\n", svg_out.c_str());
        return 0;
    }
    if (compare->parsed()) {
        StringHandle report;
        modfl_status status = modfl_compare(csv_a.c_str(), csv_b.c_str(), &report.s);
        if (status != MODFL_OK) return report_failure(status);
        std::printf("%s", report.s);
        return 0;
    }
    if (check->parsed()) {
        StringHandle report;
        modfl_status status = modfl_check_gradients(gc_seed, gc_instances, &report.s);
        if (report.s) std::printf("%s", report.s);
        if (status != MODFL_OK) return report_failure(status);
        return 0;
    }
    if (partition->parsed()) {
        ConfigHandle handle;
        if (int rc = load_config(part_config, "", "", handle)) return rc;
        StringHandle text;
        modfl_status status = modfl_partition_preview(handle.cfg, &text.s);
        if (status != MODFL_OK) return report_failure(status);
        std::printf("%s", text.s);
        return 0;
    }
    return 0;
}
