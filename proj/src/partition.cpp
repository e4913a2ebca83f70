#include "modfl/partition.hpp"

#include <algorithm>
#include <sstream>

#include "modfl/error.hpp"
#include "modfl/rng.hpp"

namespace ModFL {

namespace {

constexpr std::size_t kClasses = 9;

std::vector<std::vector<int>> members_of(const std::vector<int>& assignment) {
    int groups = 0;
    for (int g : assignment) groups = std::max(groups, g + 1);
    std::vector<std::vector<int>> out(static_cast<std::size_t>(groups));
    for (std::size_t n = 0; n < assignment.size(); ++n) {
        out[static_cast<std::size_t>(assignment[n])].push_back(static_cast<int>(n));
    }
    return out;
}

// Deals `quota` samples of each (dataset, label) stream to every client
// whose label set contains that label, ascending client id. Streams are
// shuffled with seeds derived per (dataset, label), so shards are disjoint
// by construction and independent of client iteration order.
void deal_shards(const std::vector<Dataset>& data, const PartitionPlan& plan,
                 std::uint64_t seed, const char* stream,
                 std::vector<std::vector<std::int32_t>>& shards) {
    const std::size_t num_datasets = data.size();
    shards.assign(plan.num_clients, {});

    for (std::size_t d = 0; d < num_datasets; ++d) {
        std::vector<std::vector<std::int32_t>> by_label(kClasses);
        for (std::size_t i = 0; i < data[d].size(); ++i) {
            by_label[static_cast<std::size_t>(data[d].labels[i])].push_back(
                static_cast<std::int32_t>(i));
        }

        // takers per label, restricted to this dataset's clients
        std::vector<std::vector<int>> takers(kClasses);
        for (std::size_t n = 0; n < plan.num_clients; ++n) {
            if (static_cast<std::size_t>(plan.config_group[n]) != d) continue;
            for (int label : plan.label_sets[static_cast<std::size_t>(plan.op_group[n])]) {
                takers[static_cast<std::size_t>(label)].push_back(static_cast<int>(n));
            }
        }

        std::size_t quota = SIZE_MAX;
        for (std::size_t l = 0; l < kClasses; ++l) {
            if (takers[l].empty()) continue;
            quota = std::min(quota, by_label[l].size() / takers[l].size());
        }
        if (quota == 0 || quota == SIZE_MAX) {
            for (std::size_t l = 0; l < kClasses; ++l) {
                if (!takers[l].empty() && by_label[l].size() / takers[l].size() == 0) {
                    fail(ErrorKind::partition,
                         "dataset '" + data[d].id + "' label " + std::to_string(l) + " has " +
                             std::to_string(by_label[l].size()) + " samples for " +
                             std::to_string(takers[l].size()) + " clients");
                }
            }
            fail(ErrorKind::partition, "dataset '" + data[d].id + "' has no clients");
        }

        for (std::size_t l = 0; l < kClasses; ++l) {
            if (takers[l].empty()) continue;
            Rng rng(derive_seed(seed, stream, d, l));
            rng.shuffle(by_label[l]);
            std::size_t at = 0;
            for (int client : takers[l]) {
                auto& shard = shards[static_cast<std::size_t>(client)];
                shard.insert(shard.end(), by_label[l].begin() + static_cast<std::ptrdiff_t>(at),
                             by_label[l].begin() + static_cast<std::ptrdiff_t>(at + quota));
                at += quota;
            }
        }
    }
    for (auto& shard : shards) std::sort(shard.begin(), shard.end());
}

}  // namespace

std::vector<std::vector<int>> PartitionPlan::config_members() const {
    return members_of(config_group);
}

std::vector<std::vector<int>> PartitionPlan::op_members() const {
    return members_of(op_group);
}

std::vector<std::vector<int>> make_label_sets(std::size_t num_groups, std::size_t P) {
    if (P < 1 || P > kClasses) {
        fail(ErrorKind::config, "P must lie in [1, 9], got " + std::to_string(P));
    }
    if (num_groups == 0) fail(ErrorKind::config, "need at least one operation group");
    if (P == kClasses && num_groups != 1) {
        fail(ErrorKind::config,
             "P=9 spans all labels, so num_op_groups must be 1, got " +
                 std::to_string(num_groups));
    }
    if (P < kClasses && num_groups > kClasses) {
        fail(ErrorKind::config, "at most 9 operation groups, got " +
                                    std::to_string(num_groups));
    }
    std::vector<std::vector<int>> sets(num_groups);
    for (std::size_t g = 0; g < num_groups; ++g) {
        for (std::size_t i = 0; i < P; ++i) {
            sets[g].push_back(static_cast<int>((g + i) % kClasses));
        }
        std::sort(sets[g].begin(), sets[g].end());
    }
    return sets;
}

PartitionPlan build_partition(const std::vector<Dataset>& train,
                              const std::vector<Dataset>& test, std::size_t N,
                              std::size_t num_op_groups, std::size_t P, std::uint64_t seed) {
    if (train.empty() || train.size() != test.size()) {
        fail(ErrorKind::partition, "need matching train/test dataset lists");
    }
    const std::size_t m = train.size();
    const std::size_t l = num_op_groups;
    if (N == 0 || N % (m * l) != 0) {
        fail(ErrorKind::partition, "N=" + std::to_string(N) + " is not divisible by " +
                                       std::to_string(m) + " config groups x " +
                                       std::to_string(l) + " op groups");
    }

    PartitionPlan plan;
    plan.num_clients = N;
    plan.label_sets = make_label_sets(l, P);
    plan.config_group.resize(N);
    plan.op_group.resize(N);
    const std::size_t per_config = N / m;
    for (std::size_t n = 0; n < N; ++n) {
        plan.config_group[n] = static_cast<int>(n / per_config);
        plan.op_group[n] = static_cast<int>(n % l);
    }

    deal_shards(train, plan, seed, "shard_train", plan.train_shards);
    deal_shards(test, plan, seed, "shard_test", plan.test_shards);
    return plan;
}

std::string describe(const PartitionPlan& plan, const std::vector<Dataset>& train) {
    std::ostringstream out;
    out << "clients: " << plan.num_clients << "\n";
    auto config = plan.config_members();
    auto op = plan.op_members();
    for (std::size_t i = 0; i < config.size(); ++i) {
        out << "config group " << i << " (dataset '" << train[i].id << "'): clients";
        for (int n : config[i]) out << " " << n;
        out << "\n";
    }
    for (std::size_t j = 0; j < op.size(); ++j) {
        out << "op group " << j << " labels {";
        for (std::size_t i = 0; i < plan.label_sets[j].size(); ++i) {
            if (i) out << ",";
            out << plan.label_sets[j][i];
        }
        out << "}: clients";
        for (int n : op[j]) out << " " << n;
        out << "\n";
    }
    for (std::size_t n = 0; n < plan.num_clients; ++n) {
        out << "client " << n << ": config " << plan.config_group[n] << ", op "
            << plan.op_group[n] << ", train " << plan.train_shards[n].size() << ", test "
            << plan.test_shards[n].size() << "\n";
    }
    return out.str();
}

}  // namespace ModFL
