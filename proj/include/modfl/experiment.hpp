#pragma once

#include <memory>
#include <string>
#include <vector>

#include "modfl/config.hpp"
#include "modfl/data.hpp"
#include "modfl/federation.hpp"
#include "modfl/partition.hpp"

namespace ModFL {

// One measurement: cohort is "mean" (average over the architecture's
// clients on their own test shards) or "global" (the architecture's global
// model on the full test split, emitted when one op group spans everyone).
struct MetricRow {
    int round = 0;
    std::string framework;
    std::string arch;
    std::string cohort;
    std::string metric;  // accuracy | loss
    double value = 0.0;
};

struct ExperimentResult {
    std::vector<MetricRow> rows;
};

// Datasets, architectures, partition, and client roster for a config.
// Heap-allocated so FederationContext pointers into it stay valid.
struct ExperimentSetup {
    std::vector<Dataset> train;
    std::vector<Dataset> test;
    std::vector<std::string> archs;
    std::vector<ModelSpec> specs;
    PartitionPlan plan;
    std::vector<ClientRecord> clients;

    FederationContext context(const ExperimentConfig& cfg, std::size_t threads) const;
};

std::unique_ptr<ExperimentSetup> build_setup(const ExperimentConfig& cfg);

// Initial modules: one seeded config module per group, one shared operation
// module. Every protocol starts from the same values.
struct InitialModules {
    std::vector<ParamSet> config;  // per config group
    ParamSet operation;            // shared
};
InitialModules initial_modules(const ExperimentSetup& setup, std::uint64_t seed);

// Full protocol run: seeds everything, loops rounds, returns the metric
// series (rounds x cohorts x metrics rows, in emission order).
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t threads = 1);

}  // namespace ModFL
