#include "modfl/federation.hpp"

#include <algorithm>
#include <atomic>
#include <functional>
#include <mutex>
#include <thread>

#include "modfl/error.hpp"
#include "modfl/registry.hpp"
#include "modfl/rng.hpp"

namespace ModFL {

namespace {

// Runs fn(i) for i in [0, n). Work items must be independent; results must
// not depend on which worker runs which item.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    const std::size_t workers = std::min(threads, n);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

const ModelSpec& spec_of(const FederationContext& ctx, const ClientRecord& client) {
    return ctx.specs[static_cast<std::size_t>(client.config_group)];
}

}  // namespace

ClientUpdateResult client_update(const FederationContext& ctx, ClientRecord& client,
                                 const ParamSet& w_c, const ParamSet& w_o,
                                 std::uint64_t shuffle_seed) {
    const ModelSpec& spec = spec_of(ctx, client);
    ParamSet params;
    try {
        params = concat_modules(spec, w_c, w_o);
    } catch (const Error& e) {
        fail(ErrorKind::protocol, "client " + std::to_string(client.id) + ": " + e.what());
    }
    if (client.adam.m.entries.empty()) {
        client.adam = make_adam_state(params, ctx.lr);
    }

    const Dataset& train = (*ctx.train)[static_cast<std::size_t>(client.config_group)];
    std::vector<std::int32_t> order = client.train_idx;
    Rng rng(shuffle_seed);
    for (std::size_t epoch = 0; epoch < ctx.local_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t at = 0; at < order.size(); at += ctx.batch_size) {
            const std::size_t cnt = std::min(ctx.batch_size, order.size() - at);
            Tensor batch = gather_batch(train.images, order, at, cnt);
            std::vector<int> labels(cnt);
            for (std::size_t i = 0; i < cnt; ++i) {
                labels[i] = train.labels[static_cast<std::size_t>(order[at + i])];
            }
            LossGrad lg = loss_and_grad(spec, params, batch, labels);
            adam_step_inplace(params, lg.grads, client.adam);
        }
    }

    auto [config, operation] = split_modules(spec, params);
    return {std::move(config), std::move(operation)};
}

ParamSet aggregate(const std::vector<std::pair<int, ParamSet>>& updates) {
    if (updates.empty()) fail(ErrorKind::protocol, "aggregate over an empty update list");
    std::vector<const std::pair<int, ParamSet>*> ordered;
    ordered.reserve(updates.size());
    for (const auto& u : updates) ordered.push_back(&u);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto* a, const auto* b) { return a->first < b->first; });

    ParamSet sum = ordered[0]->second;
    for (std::size_t i = 1; i < ordered.size(); ++i) {
        const ParamSet& p = ordered[i]->second;
        if (!sum.shape_compatible(p)) {
            fail(ErrorKind::protocol, "update from client " + std::to_string(ordered[i]->first) +
                                          " is not shape-compatible with the group");
        }
        for (std::size_t e = 0; e < sum.entries.size(); ++e) {
            for (std::size_t k = 0; k < sum.entries[e].weights.data.size(); ++k) {
                sum.entries[e].weights.data[k] += p.entries[e].weights.data[k];
            }
            for (std::size_t k = 0; k < sum.entries[e].bias.data.size(); ++k) {
                sum.entries[e].bias.data[k] += p.entries[e].bias.data[k];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(updates.size());
    for (ParamEntry& e : sum.entries) {
        for (double& v : e.weights.data) v *= inv;
        for (double& v : e.bias.data) v *= inv;
    }
    return sum;
}

EvalMetrics evaluate_client(const FederationContext& ctx, const ClientRecord& client,
                            const ParamSet& params) {
    const Dataset& test = (*ctx.test)[static_cast<std::size_t>(client.config_group)];
    return evaluate_metrics(spec_of(ctx, client), params, test.images, test.labels,
                            client.test_idx);
}

RoundEval run_round_modfl(const FederationContext& ctx, ServerState& server,
                          std::vector<ClientRecord>& clients) {
    const int round = server.round + 1;
    std::vector<ClientUpdateResult> results(clients.size());
    parallel_for(clients.size(), ctx.threads, [&](std::size_t i) {
        ClientRecord& c = clients[i];
        const ParamSet& w_c = server.global_config[static_cast<std::size_t>(c.config_group)];
        const ParamSet& w_o = server.global_op[static_cast<std::size_t>(c.op_group)];
        results[i] = client_update(
            ctx, c, w_c, w_o,
            derive_seed(ctx.root_seed, "shuffle", static_cast<std::uint64_t>(c.id),
                        static_cast<std::uint64_t>(round)));
    });

    for (std::size_t g = 0; g < server.groups.config_members.size(); ++g) {
        std::vector<std::pair<int, ParamSet>> updates;
        for (int id : server.groups.config_members[g]) {
            updates.emplace_back(id, results[static_cast<std::size_t>(id)].config);
        }
        server.global_config[g] = aggregate(updates);
    }
    for (std::size_t g = 0; g < server.groups.op_members.size(); ++g) {
        std::vector<std::pair<int, ParamSet>> updates;
        for (int id : server.groups.op_members[g]) {
            updates.emplace_back(id, results[static_cast<std::size_t>(id)].operation);
        }
        server.global_op[g] = aggregate(updates);
    }
    server.round = round;

    RoundEval eval;
    eval.accuracy.resize(clients.size());
    eval.loss.resize(clients.size());
    parallel_for(clients.size(), ctx.threads, [&](std::size_t i) {
        const ClientRecord& c = clients[i];
        ParamSet model = concat_modules(
            spec_of(ctx, c), server.global_config[static_cast<std::size_t>(c.config_group)],
            server.global_op[static_cast<std::size_t>(c.op_group)]);
        EvalMetrics m = evaluate_client(ctx, c, model);
        eval.accuracy[i] = m.accuracy;
        eval.loss[i] = m.loss;
    });
    return eval;
}

RoundEval run_round_fedavg(const FederationContext& ctx, FedAvgState& state,
                           std::vector<ClientRecord>& clients) {
    const int round = state.round + 1;
    std::vector<ClientUpdateResult> results(clients.size());
    parallel_for(clients.size(), ctx.threads, [&](std::size_t i) {
        ClientRecord& c = clients[i];
        const ModelSpec& spec = spec_of(ctx, c);
        auto [w_c, w_o] =
            split_modules(spec, state.global_full[static_cast<std::size_t>(c.config_group)]);
        results[i] = client_update(
            ctx, c, w_c, w_o,
            derive_seed(ctx.root_seed, "shuffle", static_cast<std::uint64_t>(c.id),
                        static_cast<std::uint64_t>(round)));
    });

    std::vector<std::vector<std::pair<int, ParamSet>>> updates(state.global_full.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const ClientRecord& c = clients[i];
        const ModelSpec& spec = spec_of(ctx, c);
        updates[static_cast<std::size_t>(c.config_group)].emplace_back(
            c.id, concat_modules(spec, results[i].config, results[i].operation));
    }
    for (std::size_t a = 0; a < state.global_full.size(); ++a) {
        if (!updates[a].empty()) state.global_full[a] = aggregate(updates[a]);
    }
    state.round = round;

    RoundEval eval;
    eval.accuracy.resize(clients.size());
    eval.loss.resize(clients.size());
    parallel_for(clients.size(), ctx.threads, [&](std::size_t i) {
        const ClientRecord& c = clients[i];
        EvalMetrics m = evaluate_client(
            ctx, c, state.global_full[static_cast<std::size_t>(c.config_group)]);
        eval.accuracy[i] = m.accuracy;
        eval.loss[i] = m.loss;
    });
    return eval;
}

RoundEval run_round_fedper(const FederationContext& ctx, FedPerState& state,
                           std::vector<ClientRecord>& clients) {
    const int round = state.round + 1;
    std::vector<ClientUpdateResult> results(clients.size());
    parallel_for(clients.size(), ctx.threads, [&](std::size_t i) {
        ClientRecord& c = clients[i];
        results[i] = client_update(
            ctx, c, state.global_base[static_cast<std::size_t>(c.config_group)], c.local_op,
            derive_seed(ctx.root_seed, "shuffle", static_cast<std::uint64_t>(c.id),
                        static_cast<std::uint64_t>(round)));
    });

    std::vector<std::vector<std::pair<int, ParamSet>>> updates(state.global_base.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const ClientRecord& c = clients[i];
        updates[static_cast<std::size_t>(c.config_group)].emplace_back(c.id,
                                                                       results[i].config);
        clients[i].local_op = std::move(results[i].operation);
    }
    for (std::size_t a = 0; a < state.global_base.size(); ++a) {
        if (!updates[a].empty()) state.global_base[a] = aggregate(updates[a]);
    }
    state.round = round;

    RoundEval eval;
    eval.accuracy.resize(clients.size());
    eval.loss.resize(clients.size());
    parallel_for(clients.size(), ctx.threads, [&](std::size_t i) {
        const ClientRecord& c = clients[i];
        ParamSet model = concat_modules(spec_of(ctx, c),
                                        state.global_base[static_cast<std::size_t>(c.config_group)],
                                        c.local_op);
        EvalMetrics m = evaluate_client(ctx, c, model);
        eval.accuracy[i] = m.accuracy;
        eval.loss[i] = m.loss;
    });
    return eval;
}

}  // namespace ModFL
