#include "modfl/config.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "modfl/error.hpp"
#include "modfl/registry.hpp"

namespace ModFL {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_size(const std::string& v, std::size_t& out) {
    try {
        std::size_t pos = 0;
        if (!v.empty() && v[0] == '-') return false;
        unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) return false;
        out = static_cast<std::size_t>(x);
        return true;
    } catch (...) {
        return false;
    }
}

bool parse_u64(const std::string& v, std::uint64_t& out) {
    std::size_t x = 0;
    if (!parse_size(v, x)) return false;
    out = static_cast<std::uint64_t>(x);
    return true;
}

bool parse_real(const std::string& v, double& out) {
    try {
        std::size_t pos = 0;
        out = std::stod(v, &pos);
        return pos == v.size();
    } catch (...) {
        return false;
    }
}

std::vector<std::string> split_commas(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void apply_pair(ExperimentConfig& cfg, const std::string& key, const std::string& value,
                const std::string& where, std::vector<std::string>& errors) {
    auto bad = [&](const char* expected) {
        errors.push_back(where + ": " + key + "=" + value + " (expected " + expected + ")");
    };
    if (key == "framework") {
        cfg.framework = value;
    } else if (key == "dataset") {
        cfg.dataset = value;
    } else if (key == "N") {
        if (!parse_size(value, cfg.clients)) bad("a positive integer");
    } else if (key == "P") {
        if (!parse_size(value, cfg.labels_per_group)) bad("a positive integer");
    } else if (key == "num_op_groups") {
        if (!parse_size(value, cfg.num_op_groups)) bad("a positive integer");
    } else if (key == "rounds") {
        if (!parse_size(value, cfg.rounds)) bad("a positive integer");
    } else if (key == "local_epochs") {
        if (!parse_size(value, cfg.local_epochs)) bad("a non-negative integer");
    } else if (key == "batch_size") {
        if (!parse_size(value, cfg.batch_size)) bad("a positive integer");
    } else if (key == "lr") {
        if (!parse_real(value, cfg.lr)) bad("a real number");
    } else if (key == "seed") {
        if (parse_u64(value, cfg.seed)) {
            cfg.seed_set = true;
        } else {
            bad("a 64-bit unsigned integer");
        }
    } else if (key == "data_paths") {
        cfg.data_paths = split_commas(value);
    } else if (key == "output_dir") {
        cfg.output_dir = value;
    } else if (key == "synth_per_class") {
        if (!parse_size(value, cfg.synth_per_class)) bad("a positive integer");
    } else if (key == "synth_noise") {
        if (!parse_real(value, cfg.synth_noise)) bad("a real number");
    } else if (key == "op_layers") {
        if (!parse_size(value, cfg.op_layers)) bad("a positive integer");
    } else if (key == "arch") {
        cfg.arch = value;
    } else {
        errors.push_back(where + ": unknown key '" + key + "'");
    }
}

void collect_violations(const ExperimentConfig& cfg, std::vector<std::string>& errors) {
    if (cfg.framework != "modfl" && cfg.framework != "fedper" && cfg.framework != "fedavg") {
        errors.push_back("framework must be modfl, fedper, or fedavg, got '" + cfg.framework +
                         "'");
    }
    if (cfg.dataset != "synthetic" && cfg.dataset != "cifar_stl") {
        errors.push_back("dataset must be synthetic or cifar_stl, got '" + cfg.dataset + "'");
    }
    if (!cfg.seed_set) errors.push_back("seed is required");
    if (cfg.rounds == 0) errors.push_back("rounds must be at least 1");
    if (cfg.batch_size == 0) errors.push_back("batch_size must be at least 1");
    if (!(cfg.lr > 0.0)) errors.push_back("lr must be positive");
    if (cfg.synth_per_class == 0) errors.push_back("synth_per_class must be at least 1");
    if (!(cfg.synth_noise >= 0.0)) errors.push_back("synth_noise must be nonnegative");
    if (cfg.op_layers == 0) errors.push_back("op_layers must be at least 1");

    if (cfg.labels_per_group != 3 && cfg.labels_per_group != 6 && cfg.labels_per_group != 9) {
        errors.push_back("P must be one of 3, 6, 9, got " +
                         std::to_string(cfg.labels_per_group));
    }
    if (cfg.num_op_groups < 1 || cfg.num_op_groups > 9) {
        errors.push_back("num_op_groups must lie in [1, 9], got " +
                         std::to_string(cfg.num_op_groups));
    } else if (cfg.labels_per_group == 9 && cfg.num_op_groups != 1) {
        errors.push_back("P=9 spans all labels, so num_op_groups must be 1");
    }

    std::size_t m = 2;
    if (!cfg.arch.empty()) {
        if (!is_known_arch(cfg.arch)) {
            errors.push_back("unknown arch '" + cfg.arch + "'");
        } else {
            const bool synth_arch = cfg.arch.rfind("synth", 0) == 0;
            if (cfg.dataset == "synthetic" && !synth_arch) {
                errors.push_back("arch '" + cfg.arch + "' does not run on synthetic data");
            }
            if (cfg.dataset == "cifar_stl" && synth_arch) {
                errors.push_back("arch '" + cfg.arch + "' does not run on cifar_stl data");
            }
        }
        m = 1;
    }
    if (cfg.clients == 0) {
        errors.push_back("N must be at least 1");
    } else if (cfg.num_op_groups >= 1 && cfg.num_op_groups <= 9 &&
               cfg.clients % (m * cfg.num_op_groups) != 0) {
        errors.push_back("N=" + std::to_string(cfg.clients) + " must be divisible by " +
                         std::to_string(m) + " config groups x " +
                         std::to_string(cfg.num_op_groups) + " op groups");
    }

    if (cfg.dataset == "cifar_stl") {
        const std::size_t need = cfg.arch.empty() ? 2 : 1;
        if (cfg.data_paths.size() != need) {
            errors.push_back("dataset cifar_stl needs " + std::to_string(need) +
                             " data_paths entr" + (need == 1 ? "y" : "ies") + ", got " +
                             std::to_string(cfg.data_paths.size()) +
                             " (set data_paths or MODFL_DATA_DIR)");
        }
    }
}

ExperimentConfig parse_lines(std::istream& in, const std::string& origin,
                             const std::vector<std::string>& overrides) {
    ExperimentConfig cfg;
    std::vector<std::string> errors;
    std::vector<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back(where + ": expected key=value, got '" + line + "'");
            continue;
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
            errors.push_back(where + ": duplicate key '" + key + "'");
            continue;
        }
        seen.push_back(key);
        apply_pair(cfg, key, value, where, errors);
    }
    for (const std::string& ov : overrides) {
        std::size_t eq = ov.find('=');
        if (eq == std::string::npos) {
            errors.push_back("override: expected key=value, got '" + ov + "'");
            continue;
        }
        apply_pair(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)), "override", errors);
    }

    if (cfg.dataset == "cifar_stl" && cfg.data_paths.empty()) {
        if (const char* root = std::getenv("MODFL_DATA_DIR")) {
            if (cfg.arch == "cifar_gen") {
                cfg.data_paths = {std::string(root) + "/cifar"};
            } else if (cfg.arch == "stl_gen") {
                cfg.data_paths = {std::string(root) + "/stl"};
            } else {
                cfg.data_paths = {std::string(root) + "/cifar", std::string(root) + "/stl"};
            }
        }
    }

    collect_violations(cfg, errors);
    if (!errors.empty()) {
        std::string joined = "invalid config:";
        for (const std::string& e : errors) joined += "\n  - " + e;
        fail(ErrorKind::config, joined);
    }
    return cfg;
}

}  // namespace

ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::config, "cannot open config '" + path + "'");
    return parse_lines(in, path, overrides);
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin,
                                   const std::vector<std::string>& overrides) {
    std::istringstream in(text);
    return parse_lines(in, origin, overrides);
}

void validate_config(const ExperimentConfig& cfg) {
    std::vector<std::string> errors;
    collect_violations(cfg, errors);
    if (!errors.empty()) {
        std::string joined = "invalid config:";
        for (const std::string& e : errors) joined += "\n  - " + e;
        fail(ErrorKind::config, joined);
    }
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream out;
    if (!cfg.arch.empty()) out << "arch=" << cfg.arch << "\n";
    out << "batch_size=" << cfg.batch_size << "\n";
    if (!cfg.data_paths.empty()) {
        out << "data_paths=";
        for (std::size_t i = 0; i < cfg.data_paths.size(); ++i) {
            if (i) out << ",";
            out << cfg.data_paths[i];
        }
        out << "\n";
    }
    out << "dataset=" << cfg.dataset << "\n";
    out << "framework=" << cfg.framework << "\n";
    out << "local_epochs=" << cfg.local_epochs << "\n";
    char lr[64];
    std::snprintf(lr, sizeof(lr), "%.17g", cfg.lr);
    out << "lr=" << lr << "\n";
    out << "N=" << cfg.clients << "\n";
    out << "num_op_groups=" << cfg.num_op_groups << "\n";
    out << "op_layers=" << cfg.op_layers << "\n";
    out << "output_dir=" << cfg.output_dir << "\n";
    out << "P=" << cfg.labels_per_group << "\n";
    out << "rounds=" << cfg.rounds << "\n";
    out << "seed=" << cfg.seed << "\n";
    char noise[64];
    std::snprintf(noise, sizeof(noise), "%.17g", cfg.synth_noise);
    out << "synth_noise=" << noise << "\n";
    out << "synth_per_class=" << cfg.synth_per_class << "\n";
    return out.str();
}

std::vector<std::string> config_archs(const ExperimentConfig& cfg) {
    if (!cfg.arch.empty()) return {cfg.arch};
    if (cfg.dataset == "synthetic") return {"synth_lo", "synth_hi"};
    return {"cifar_gen", "stl_gen"};
}

}  // namespace ModFL
