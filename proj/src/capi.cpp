#include "modfl.h"

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "modfl/config.hpp"
#include "modfl/error.hpp"
#include "modfl/experiment.hpp"
#include "modfl/gradcheck.hpp"
#include "modfl/partition.hpp"
#include "modfl/report.hpp"

namespace {

thread_local std::string g_last_error;

ModFL::ExperimentConfig& unwrap(modfl_config* cfg) {
    return *reinterpret_cast<ModFL::ExperimentConfig*>(cfg);
}

const ModFL::ExperimentConfig& unwrap(const modfl_config* cfg) {
    return *reinterpret_cast<const ModFL::ExperimentConfig*>(cfg);
}

char* copy_string(const std::string& s) {
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

modfl_status status_of(const ModFL::Error& e) {
    switch (e.category()) {
        case 1: return MODFL_ERR_CONFIG;
        case 2: return MODFL_ERR_DATA;
        default: return MODFL_ERR_RUNTIME;
    }
}

template <typename Fn>
modfl_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return MODFL_OK;
    } catch (const ModFL::Error& e) {
        g_last_error = e.what();
        return status_of(e);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MODFL_ERR_RUNTIME;
    } catch (...) {
        g_last_error = "unknown error";
        return MODFL_ERR_RUNTIME;
    }
}

}  // namespace

extern "C" {

const char* modfl_version(void) { return ModFL::kVersion; }

const char* modfl_last_error(void) { return g_last_error.c_str(); }

modfl_status modfl_config_load(const char* path, const char* const* overrides,
                               size_t n_overrides, modfl_config** out) {
    if (!path || !out || (n_overrides > 0 && !overrides)) {
        g_last_error = "null argument";
        return MODFL_ERR_CONFIG;
    }
    *out = nullptr;
    return guarded([&] {
        std::vector<std::string> ov(overrides, overrides + n_overrides);
        auto* cfg = new ModFL::ExperimentConfig(ModFL::parse_config(path, ov));
        *out = reinterpret_cast<modfl_config*>(cfg);
    });
}

modfl_status modfl_config_serialize(const modfl_config* cfg, char** out) {
    if (!cfg || !out) {
        g_last_error = "null argument";
        return MODFL_ERR_CONFIG;
    }
    return guarded([&] { *out = copy_string(ModFL::serialize_config(unwrap(cfg))); });
}

void modfl_config_free(modfl_config* cfg) {
    if (cfg) delete &unwrap(cfg);
}

modfl_status modfl_run(const modfl_config* cfg, size_t threads) {
    if (!cfg) {
        g_last_error = "null config";
        return MODFL_ERR_CONFIG;
    }
    return guarded([&] { ModFL::run_to_artifacts(unwrap(cfg), threads ? threads : 1); });
}

modfl_status modfl_plot(const char* const* csv_paths, size_t n_paths, const char* svg_out) {
    if (!csv_paths || n_paths == 0 || !svg_out) {
        g_last_error = "need at least one CSV path and an output path";
        return MODFL_ERR_CONFIG;
    }
    return guarded([&] {
        std::vector<std::vector<ModFL::MetricRow>> inputs;
        for (size_t i = 0; i < n_paths; ++i) {
            inputs.push_back(ModFL::read_metrics_csv(csv_paths[i]));
        }
        const std::string svg = ModFL::render_plot_svg(inputs);
        FILE* f = std::fopen(svg_out, "wb");
        if (!f) ModFL::fail(ModFL::ErrorKind::runtime, std::string("cannot write '") + svg_out + "'");
        const size_t written = std::fwrite(svg.data(), 1, svg.size(), f);
        std::fclose(f);
        if (written != svg.size()) {
            ModFL::fail(ModFL::ErrorKind::runtime, std::string("short write to '") + svg_out + "'");
        }
    });
}

modfl_status modfl_compare(const char* csv_a, const char* csv_b, char** report_out) {
    if (!csv_a || !csv_b || !report_out) {
        g_last_error = "null argument";
        return MODFL_ERR_CONFIG;
    }
    return guarded([&] {
        ModFL::CompareReport report = ModFL::compare_metrics(ModFL::read_metrics_csv(csv_a),
                                                             ModFL::read_metrics_csv(csv_b));
        *report_out = copy_string(report.text);
    });
}

modfl_status modfl_check_gradients(uint64_t seed, size_t instances, char** report_out) {
    if (!report_out) {
        g_last_error = "null argument";
        return MODFL_ERR_CONFIG;
    }
    *report_out = nullptr;
    ModFL::GradCheckReport report;
    modfl_status status = guarded([&] {
        report = ModFL::run_gradient_checks(seed, instances ? instances : 60);
        *report_out = copy_string(ModFL::render_gradcheck(report));
    });
    if (status != MODFL_OK) return status;
    if (!report.ok()) {
        g_last_error = "gradient check failed";
        return MODFL_ERR_RUNTIME;
    }
    return MODFL_OK;
}

modfl_status modfl_partition_preview(const modfl_config* cfg, char** text_out) {
    if (!cfg || !text_out) {
        g_last_error = "null argument";
        return MODFL_ERR_CONFIG;
    }
    return guarded([&] {
        auto setup = ModFL::build_setup(unwrap(cfg));
        *text_out = copy_string(ModFL::describe(setup->plan, setup->train));
    });
}

void modfl_string_free(char* s) { delete[] s; }

}  // extern "C"
