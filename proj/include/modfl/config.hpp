#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ModFL {

// Flat key=value experiment description. Parsing fills the struct; validate
// collects every violation before rejecting.
struct ExperimentConfig {
    std::string framework;  // modfl | fedper | fedavg
    std::string dataset;    // synthetic | cifar_stl
    std::size_t clients = 0;           // key N
    std::size_t labels_per_group = 0;  // key P
    std::size_t num_op_groups = 0;
    std::size_t rounds = 0;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 16;
    double lr = 0.001;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> data_paths;  // cifar dir, stl dir
    std::string output_dir = "out";
    std::size_t synth_per_class = 96;
    double synth_noise = 0.35;
    std::size_t op_layers = 3;
    std::string arch;  // optional: restrict the run to one architecture
};

// Parses and validates a config file. overrides are extra "key=value"
// strings applied after the file, same syntax and checks.
ExperimentConfig parse_config(const std::string& path,
                              const std::vector<std::string>& overrides = {});

// Same, from in-memory text. origin names the source in error messages.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin,
                                   const std::vector<std::string>& overrides = {});

// Throws a config error listing every violated invariant.
void validate_config(const ExperimentConfig& cfg);

// Canonical key=value form; parse(serialize(cfg)) reproduces cfg.
std::string serialize_config(const ExperimentConfig& cfg);

// Architectures the config trains, in config-group order.
std::vector<std::string> config_archs(const ExperimentConfig& cfg);

}  // namespace ModFL
