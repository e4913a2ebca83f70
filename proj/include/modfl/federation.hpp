#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modfl/data.hpp"
#include "modfl/nn.hpp"
#include "modfl/partition.hpp"

namespace ModFL {

// One simulated client. Shard indices point into the train/test splits of
// the dataset given by config_group. local_op holds the personalisation
// layers under fedper; the other protocols leave it empty.
struct ClientRecord {
    int id = 0;
    int config_group = 0;
    int op_group = 0;
    std::string arch_id;
    std::vector<std::int32_t> train_idx;
    std::vector<std::int32_t> test_idx;
    ParamSet local_op;
    AdamState adam;
};

struct GroupMap {
    std::vector<std::vector<int>> config_members;
    std::vector<std::vector<int>> op_members;
};

// Per-cohort global modules, one config module per device generation and
// one operation module per usage cohort.
struct ServerState {
    int round = 0;
    std::vector<ParamSet> global_config;
    std::vector<ParamSet> global_op;
    GroupMap groups;
};

// Everything a round needs besides protocol state. specs is indexed by
// config group; lr seeds each client's optimizer.
struct FederationContext {
    const std::vector<Dataset>* train = nullptr;
    const std::vector<Dataset>* test = nullptr;
    std::vector<ModelSpec> specs;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 16;
    double lr = 0.001;
    std::uint64_t root_seed = 0;
    std::size_t threads = 1;
};

struct ClientUpdateResult {
    ParamSet config;
    ParamSet operation;
};

// Local training: concatenates the received modules, runs local_epochs of
// mini-batch Adam over the client's shard (order drawn from shuffle_seed),
// and re-splits. The client's Adam state persists across rounds.
ClientUpdateResult client_update(const FederationContext& ctx, ClientRecord& client,
                                 const ParamSet& w_c, const ParamSet& w_o,
                                 std::uint64_t shuffle_seed);

// Unweighted mean of shape-compatible parameter sets. Updates are summed in
// ascending client id order regardless of input order, so the result is
// independent of delivery schedule.
ParamSet aggregate(const std::vector<std::pair<int, ParamSet>>& updates);

struct RoundEval {
    std::vector<double> accuracy;
    std::vector<double> loss;
};

// One communication round: dispatch per-cohort modules, train locally,
// average config modules within each config group and operation modules
// within each operation group, then evaluate every client's new model on
// its test shard.
RoundEval run_round_modfl(const FederationContext& ctx, ServerState& server,
                          std::vector<ClientRecord>& clients);

struct FedAvgState {
    int round = 0;
    std::vector<ParamSet> global_full;
};

struct FedPerState {
    int round = 0;
    std::vector<ParamSet> global_base;
};

// Full-model averaging within each architecture.
RoundEval run_round_fedavg(const FederationContext& ctx, FedAvgState& state,
                           std::vector<ClientRecord>& clients);

// Base (config module) averaging within each architecture; operation
// modules stay on their clients and are never transmitted.
RoundEval run_round_fedper(const FederationContext& ctx, FedPerState& state,
                           std::vector<ClientRecord>& clients);

// Per-client evaluation used by the round runners: accuracy and mean loss
// of `params` on the client's test shard.
EvalMetrics evaluate_client(const FederationContext& ctx, const ClientRecord& client,
                            const ParamSet& params);

}  // namespace ModFL
