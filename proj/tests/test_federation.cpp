#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <vector>

#include "modfl/data.hpp"
#include "modfl/error.hpp"
#include "modfl/federation.hpp"
#include "modfl/partition.hpp"
#include "modfl/registry.hpp"
#include "modfl/rng.hpp"

using namespace ModFL;

namespace {

bool params_bit_equal(const ParamSet& a, const ParamSet& b) {
    if (a.entries.size() != b.entries.size()) return false;
    for (std::size_t e = 0; e < a.entries.size(); ++e) {
        if (a.entries[e].name != b.entries[e].name) return false;
        if (a.entries[e].weights.data != b.entries[e].weights.data) return false;
        if (a.entries[e].bias.data != b.entries[e].bias.data) return false;
    }
    return true;
}

double params_max_diff(const ParamSet& a, const ParamSet& b) {
    double m = 0.0;
    for (std::size_t e = 0; e < a.entries.size(); ++e) {
        for (std::size_t i = 0; i < a.entries[e].weights.data.size(); ++i) {
            m = std::max(m, std::abs(a.entries[e].weights.data[i] -
                                     b.entries[e].weights.data[i]));
        }
        for (std::size_t i = 0; i < a.entries[e].bias.data.size(); ++i) {
            m = std::max(m, std::abs(a.entries[e].bias.data[i] - b.entries[e].bias.data[i]));
        }
    }
    return m;
}

ParamSet scaled_template(const ModelSpec& spec, double value) {
    ParamSet p = param_template(spec);
    for (auto& e : p.entries) {
        for (double& v : e.weights.data) v = value;
        for (double& v : e.bias.data) v = value;
    }
    return p;
}

// Self-contained federation fixture over synthetic data. Holds the datasets
// the context points into, so it lives on the heap and never moves.
struct Env {
    std::vector<Dataset> train;
    std::vector<Dataset> test;
    std::vector<ModelSpec> specs;
    PartitionPlan plan;
    std::vector<ClientRecord> clients;
    std::vector<ParamSet> init_config;
    ParamSet init_op;
    FederationContext ctx;
};

std::unique_ptr<Env> make_env(const std::vector<std::string>& archs, std::size_t N,
                              std::size_t num_op_groups, std::size_t P,
                              std::uint64_t seed, std::size_t per_class = 12) {
    auto env = std::make_unique<Env>();
    for (std::size_t a = 0; a < archs.size(); ++a) {
        env->specs.push_back(build_arch(archs[a]));
        const std::size_t res = env->specs.back().input.height;
        Dataset full = generate_synthetic(res, per_class, derive_seed(seed, "synth", a));
        auto [tr, te] = even_and_split(full, full.size(), 0.75, derive_seed(seed, "split", a));
        env->train.push_back(std::move(tr));
        env->test.push_back(std::move(te));
    }
    env->plan = build_partition(env->train, env->test, N, num_op_groups, P,
                                derive_seed(seed, "partition"));
    for (std::size_t n = 0; n < N; ++n) {
        ClientRecord c;
        c.id = static_cast<int>(n);
        c.config_group = env->plan.config_group[n];
        c.op_group = env->plan.op_group[n];
        c.arch_id = env->specs[static_cast<std::size_t>(c.config_group)].arch_id;
        c.train_idx = env->plan.train_shards[n];
        c.test_idx = env->plan.test_shards[n];
        env->clients.push_back(std::move(c));
    }
    for (std::size_t i = 0; i < env->specs.size(); ++i) {
        ParamSet full = init_params(env->specs[i], derive_seed(seed, "init_config", i));
        auto [cfg, op] = split_modules(env->specs[i], full);
        env->init_config.push_back(std::move(cfg));
        if (i == 0) env->init_op = std::move(op);
    }
    env->ctx.train = &env->train;
    env->ctx.test = &env->test;
    env->ctx.specs = env->specs;
    env->ctx.root_seed = seed;
    return env;
}

ServerState make_server(const Env& env, std::size_t num_op_groups) {
    ServerState s;
    s.global_config = env.init_config;
    s.global_op.assign(num_op_groups, env.init_op);
    s.groups.config_members = env.plan.config_members();
    s.groups.op_members = env.plan.op_members();
    return s;
}

FedAvgState make_fedavg(const Env& env) {
    FedAvgState s;
    for (std::size_t i = 0; i < env.specs.size(); ++i) {
        s.global_full.push_back(concat_modules(env.specs[i], env.init_config[i], env.init_op));
    }
    return s;
}

FedPerState make_fedper(const Env& env, std::vector<ClientRecord>& clients) {
    FedPerState s;
    s.global_base = env.init_config;
    for (ClientRecord& c : clients) c.local_op = env.init_op;
    return s;
}

}  // namespace

TEST_CASE("client_update equals direct training on the concatenated model") {
    auto env = make_env({"synth_lo"}, 1, 1, 9, 71);
    ClientRecord& cl = env->clients[0];
    const std::uint64_t shuffle_seed = derive_seed(7, "probe");

    ClientUpdateResult got = client_update(env->ctx, cl, env->init_config[0], env->init_op,
                                           shuffle_seed);

    // oracle: replay the exact same schedule by hand
    const ModelSpec& spec = env->specs[0];
    ParamSet params = concat_modules(spec, env->init_config[0], env->init_op);
    AdamState adam = make_adam_state(params, env->ctx.lr);
    std::vector<std::int32_t> order = cl.train_idx;
    Rng rng(shuffle_seed);
    rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += env->ctx.batch_size) {
        const std::size_t cnt = std::min(env->ctx.batch_size, order.size() - at);
        Tensor batch = gather_batch(env->train[0].images, order, at, cnt);
        std::vector<int> labels(cnt);
        for (std::size_t i = 0; i < cnt; ++i) {
            labels[i] = env->train[0].labels[static_cast<std::size_t>(order[at + i])];
        }
        LossGrad lg = loss_and_grad(spec, params, batch, labels);
        adam_step_inplace(params, lg.grads, adam);
    }
    auto [want_cfg, want_op] = split_modules(spec, params);
    CHECK(params_bit_equal(got.config, want_cfg));
    CHECK(params_bit_equal(got.operation, want_op));
}

TEST_CASE("client_update with zero epochs returns the dispatched modules") {
    auto env = make_env({"synth_lo"}, 1, 1, 9, 72);
    env->ctx.local_epochs = 0;
    ClientUpdateResult got =
        client_update(env->ctx, env->clients[0], env->init_config[0], env->init_op, 1);
    CHECK(params_bit_equal(got.config, env->init_config[0]));
    CHECK(params_bit_equal(got.operation, env->init_op));
}

TEST_CASE("client_update rejects modules from the wrong architecture") {
    auto env = make_env({"synth_lo"}, 1, 1, 9, 73);
    ModelSpec hi = build_arch("synth_hi");
    ParamSet wrong_cfg = config_template(hi);
    try {
        client_update(env->ctx, env->clients[0], wrong_cfg, env->init_op, 1);
        FAIL("expected a protocol error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::protocol);
        CHECK(std::string(e.what()).find("client 0") != std::string::npos);
    }
}

TEST_CASE("aggregate is the exact unweighted mean") {
    ModelSpec spec = build_arch("synth_lo");

    SUBCASE("a single update passes through unchanged") {
        ParamSet p = init_params(spec, 5);
        ParamSet mean = aggregate({{0, p}});
        CHECK(params_bit_equal(mean, p));
    }

    SUBCASE("constants 2 and 4 average to 3") {
        ParamSet mean = aggregate({{0, scaled_template(spec, 2.0)},
                                   {1, scaled_template(spec, 4.0)}});
        for (const auto& e : mean.entries) {
            for (double v : e.weights.data) CHECK(v == 3.0);
            for (double v : e.bias.data) CHECK(v == 3.0);
        }
    }

    SUBCASE("five random updates match an elementwise mean oracle") {
        std::vector<std::pair<int, ParamSet>> updates;
        for (int i = 0; i < 5; ++i) {
            updates.emplace_back(i, init_params(spec, 100 + static_cast<std::uint64_t>(i)));
        }
        ParamSet mean = aggregate(updates);
        for (std::size_t e = 0; e < mean.entries.size(); ++e) {
            for (std::size_t k = 0; k < mean.entries[e].weights.data.size(); ++k) {
                double s = 0.0;
                for (const auto& [id, p] : updates) s += p.entries[e].weights.data[k];
                CHECK(std::abs(mean.entries[e].weights.data[k] - s / 5.0) <= 1e-15);
            }
        }
    }

    SUBCASE("result ignores delivery order entirely") {
        std::vector<std::pair<int, ParamSet>> updates;
        for (int i = 0; i < 6; ++i) {
            updates.emplace_back(i, init_params(spec, 200 + static_cast<std::uint64_t>(i)));
        }
        ParamSet a = aggregate(updates);
        Rng rng(9);
        for (int trial = 0; trial < 20; ++trial) {
            rng.shuffle(updates);
            CHECK(params_bit_equal(aggregate(updates), a));
        }
    }

    SUBCASE("empty and mismatched inputs are protocol errors") {
        CHECK_THROWS_AS(aggregate({}), Error);
        ParamSet lo = init_params(spec, 1);
        ParamSet hi = init_params(build_arch("synth_hi"), 1);
        try {
            aggregate({{3, lo}, {7, hi}});
            FAIL("expected a protocol error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::protocol);
            CHECK(std::string(e.what()).find("client 7") != std::string::npos);
        }
    }
}

TEST_CASE("a 2x2 federation dispatches and mixes along both group axes") {
    auto env = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 81);
    // block assignment over generations, round-robin over usage cohorts
    CHECK(env->plan.config_group == std::vector<int>{0, 0, 1, 1});
    CHECK(env->plan.op_group == std::vector<int>{0, 1, 0, 1});

    ServerState server = make_server(*env, 2);
    CHECK(server.groups.config_members == std::vector<std::vector<int>>{{0, 1}, {2, 3}});
    CHECK(server.groups.op_members == std::vector<std::vector<int>>{{0, 2}, {1, 3}});

    RoundEval eval = run_round_modfl(env->ctx, server, env->clients);
    CHECK(server.round == 1);
    CHECK(eval.accuracy.size() == 4);

    // the four cohort combinations yield four distinct client-facing models
    std::vector<ParamSet> models;
    for (const ClientRecord& c : env->clients) {
        models.push_back(concat_modules(
            env->specs[static_cast<std::size_t>(c.config_group)],
            server.global_config[static_cast<std::size_t>(c.config_group)],
            server.global_op[static_cast<std::size_t>(c.op_group)]));
    }
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = i + 1; j < models.size(); ++j) {
            CHECK(!params_bit_equal(models[i], models[j]));
        }
    }

    // config modules aggregate only over their generation: reproduce by hand
    auto env2 = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 81);
    std::vector<ClientUpdateResult> updates(4);
    for (std::size_t i = 0; i < 4; ++i) {
        ClientRecord& c = env2->clients[i];
        updates[i] = client_update(
            env2->ctx, c, env2->init_config[static_cast<std::size_t>(c.config_group)],
            env2->init_op,
            derive_seed(env2->ctx.root_seed, "shuffle", static_cast<std::uint64_t>(c.id), 1));
    }
    ParamSet cfg0 = aggregate({{0, updates[0].config}, {1, updates[1].config}});
    ParamSet op1 = aggregate({{1, updates[1].operation}, {3, updates[3].operation}});
    CHECK(params_bit_equal(server.global_config[0], cfg0));
    CHECK(params_bit_equal(server.global_op[1], op1));
}

TEST_CASE("rounds are deterministic end to end") {
    auto a = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 83);
    auto b = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 83);
    ServerState sa = make_server(*a, 2), sb = make_server(*b, 2);
    for (int r = 0; r < 2; ++r) {
        RoundEval ea = run_round_modfl(a->ctx, sa, a->clients);
        RoundEval eb = run_round_modfl(b->ctx, sb, b->clients);
        CHECK(ea.accuracy == eb.accuracy);
        CHECK(ea.loss == eb.loss);
    }
    for (std::size_t g = 0; g < 2; ++g) {
        CHECK(params_bit_equal(sa.global_config[g], sb.global_config[g]));
        CHECK(params_bit_equal(sa.global_op[g], sb.global_op[g]));
    }
}

TEST_CASE("a perturbed shard never leaks into other usage cohorts in one round") {
    auto base = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 85);
    auto pert = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 85);

    // poke one pixel of one training image belonging to client 0 (gen 0, cohort 0)
    const std::int32_t victim = pert->clients[0].train_idx[0];
    pert->train[0].images.data[static_cast<std::size_t>(victim) * 256] += 0.25;

    ServerState sb = make_server(*base, 2), sp = make_server(*pert, 2);
    run_round_modfl(base->ctx, sb, base->clients);
    run_round_modfl(pert->ctx, sp, pert->clients);

    // client 0 feeds config group 0 and op group 0; those must move
    CHECK(!params_bit_equal(sb.global_config[0], sp.global_config[0]));
    CHECK(!params_bit_equal(sb.global_op[0], sp.global_op[0]));
    // generation 1 and cohort 1 aggregate exclusively over untouched clients
    CHECK(params_bit_equal(sb.global_config[1], sp.global_config[1]));
    CHECK(params_bit_equal(sb.global_op[1], sp.global_op[1]));
}

TEST_CASE("fedper keeps personalisation layers strictly local") {
    auto env = make_env({"synth_lo"}, 2, 2, 3, 87);
    FedPerState state = make_fedper(*env, env->clients);
    RoundEval eval = run_round_fedper(env->ctx, state, env->clients);
    CHECK(state.round == 1);
    CHECK(eval.accuracy.size() == 2);

    // both clients trained, so both local modules moved and diverged
    CHECK(!params_bit_equal(env->clients[0].local_op, env->init_op));
    CHECK(!params_bit_equal(env->clients[1].local_op, env->init_op));
    CHECK(!params_bit_equal(env->clients[0].local_op, env->clients[1].local_op));

    // the base is the mean of the two clients' config updates: reproduce
    auto env2 = make_env({"synth_lo"}, 2, 2, 3, 87);
    std::vector<ClientUpdateResult> ups(2);
    for (std::size_t i = 0; i < 2; ++i) {
        ClientRecord& c = env2->clients[i];
        ups[i] = client_update(
            env2->ctx, c, env2->init_config[0], env2->init_op,
            derive_seed(env2->ctx.root_seed, "shuffle", static_cast<std::uint64_t>(c.id), 1));
    }
    ParamSet want = aggregate({{0, ups[0].config}, {1, ups[1].config}});
    CHECK(params_bit_equal(state.global_base[0], want));
    CHECK(params_bit_equal(env->clients[0].local_op, ups[0].operation));
    CHECK(params_bit_equal(env->clients[1].local_op, ups[1].operation));
}

TEST_CASE("fedavg averages full models within an architecture") {
    auto env = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 89);
    FedAvgState state = make_fedavg(*env);
    RoundEval eval = run_round_fedavg(env->ctx, state, env->clients);
    CHECK(state.round == 1);
    CHECK(eval.accuracy.size() == 4);

    auto env2 = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 89);
    std::vector<std::pair<int, ParamSet>> gen0;
    for (std::size_t i = 0; i < 2; ++i) {
        ClientRecord& c = env2->clients[i];
        ClientUpdateResult u = client_update(
            env2->ctx, c, env2->init_config[0], env2->init_op,
            derive_seed(env2->ctx.root_seed, "shuffle", static_cast<std::uint64_t>(c.id), 1));
        gen0.emplace_back(c.id, concat_modules(env2->specs[0], u.config, u.operation));
    }
    CHECK(params_bit_equal(state.global_full[0], aggregate(gen0)));
}

TEST_CASE("with one generation and one cohort the three protocols coincide") {
    // single client: averaging over a singleton is the identity, so every
    // protocol must walk the same trajectory bit for bit
    auto ma = make_env({"synth_lo"}, 1, 1, 9, 91);
    auto fa = make_env({"synth_lo"}, 1, 1, 9, 91);
    auto pa = make_env({"synth_lo"}, 1, 1, 9, 91);
    ServerState server = make_server(*ma, 1);
    FedAvgState avg = make_fedavg(*fa);
    FedPerState per = make_fedper(*pa, pa->clients);

    for (int r = 0; r < 3; ++r) {
        RoundEval em = run_round_modfl(ma->ctx, server, ma->clients);
        RoundEval ea = run_round_fedavg(fa->ctx, avg, fa->clients);
        RoundEval ep = run_round_fedper(pa->ctx, per, pa->clients);
        CHECK(em.accuracy == ea.accuracy);
        CHECK(em.loss == ea.loss);
        CHECK(em.accuracy == ep.accuracy);
        CHECK(em.loss == ep.loss);
    }
    ParamSet modfl_full = concat_modules(ma->specs[0], server.global_config[0],
                                         server.global_op[0]);
    ParamSet fedper_full = concat_modules(pa->specs[0], per.global_base[0],
                                          pa->clients[0].local_op);
    CHECK(params_bit_equal(modfl_full, avg.global_full[0]));
    CHECK(params_bit_equal(modfl_full, fedper_full));
}

TEST_CASE("multi-client single-cohort modfl walks the fedavg trajectory") {
    auto ma = make_env({"synth_lo"}, 3, 1, 9, 93);
    auto fa = make_env({"synth_lo"}, 3, 1, 9, 93);
    ServerState server = make_server(*ma, 1);
    FedAvgState avg = make_fedavg(*fa);
    for (int r = 0; r < 2; ++r) {
        run_round_modfl(ma->ctx, server, ma->clients);
        run_round_fedavg(fa->ctx, avg, fa->clients);
    }
    ParamSet modfl_full = concat_modules(ma->specs[0], server.global_config[0],
                                         server.global_op[0]);
    CHECK(params_max_diff(modfl_full, avg.global_full[0]) <= 1e-12);
}

TEST_CASE("singleton cohorts turn modfl into fedper") {
    auto ma = make_env({"synth_lo"}, 3, 3, 3, 95);
    auto pa = make_env({"synth_lo"}, 3, 3, 3, 95);
    ServerState server = make_server(*ma, 3);
    FedPerState per = make_fedper(*pa, pa->clients);
    for (int r = 0; r < 2; ++r) {
        run_round_modfl(ma->ctx, server, ma->clients);
        run_round_fedper(pa->ctx, per, pa->clients);
    }
    CHECK(params_bit_equal(server.global_config[0], per.global_base[0]));
    for (std::size_t n = 0; n < 3; ++n) {
        // client n sits alone in cohort n, so its cohort module is its own
        CHECK(params_bit_equal(server.global_op[pa->clients[n].op_group],
                               pa->clients[n].local_op));
    }
}

TEST_CASE("threaded rounds reproduce the sequential result exactly") {
    auto seq = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 97);
    auto par = make_env({"synth_lo", "synth_hi"}, 4, 2, 3, 97);
    par->ctx.threads = 4;
    ServerState ss = make_server(*seq, 2), sp = make_server(*par, 2);
    for (int r = 0; r < 2; ++r) {
        RoundEval ea = run_round_modfl(seq->ctx, ss, seq->clients);
        RoundEval eb = run_round_modfl(par->ctx, sp, par->clients);
        CHECK(ea.accuracy == eb.accuracy);
        CHECK(ea.loss == eb.loss);
    }
    for (std::size_t g = 0; g < 2; ++g) {
        CHECK(params_bit_equal(ss.global_config[g], sp.global_config[g]));
        CHECK(params_bit_equal(ss.global_op[g], sp.global_op[g]));
    }
}
