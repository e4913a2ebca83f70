#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modfl/data.hpp"

namespace ModFL {

// Assignment of clients to cohorts plus their data shards. Config group ids
// index the architecture/dataset list; shard indices point into that
// dataset's train or test split.
struct PartitionPlan {
    std::size_t num_clients = 0;
    std::vector<int> config_group;
    std::vector<int> op_group;
    std::vector<std::vector<int>> label_sets;
    std::vector<std::vector<std::int32_t>> train_shards;
    std::vector<std::vector<std::int32_t>> test_shards;

    std::vector<std::vector<int>> config_members() const;
    std::vector<std::vector<int>> op_members() const;
};

// Label set of group g is the circular window {(g+i) mod 9 : 0 <= i < P}.
// Windows are pairwise distinct for P < 9; P = 9 collapses to one group.
std::vector<std::vector<int>> make_label_sets(std::size_t num_groups, std::size_t P);

// Deals equal, disjoint, label-balanced shards to N clients. Client n joins
// config group n / (N/m) where m = train.size(), and op group n % l. Both
// splits of dataset d feed only that config group's clients.
PartitionPlan build_partition(const std::vector<Dataset>& train,
                              const std::vector<Dataset>& test, std::size_t N,
                              std::size_t num_op_groups, std::size_t P, std::uint64_t seed);

// Human-readable plan listing for dry runs.
std::string describe(const PartitionPlan& plan, const std::vector<Dataset>& train);

}  // namespace ModFL
