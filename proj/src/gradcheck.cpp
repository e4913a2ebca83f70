#include "modfl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include "modfl/nn.hpp"
#include "modfl/rng.hpp"

namespace ModFL {

namespace {

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-4;

std::vector<ModelSpec> check_models() {
    std::vector<ModelSpec> models;
    {
        ModelSpec m;
        m.arch_id = "gc_dense";
        m.input = {1, 2, 3};
        m.layers = {LayerSpec::flatten(), LayerSpec::dense(5, Activation::relu),
                    LayerSpec::dense(3, Activation::softmax)};
        m.split_point = 2;
        models.push_back(m);
    }
    {
        ModelSpec m;
        m.arch_id = "gc_conv_same";
        m.input = {2, 5, 5};
        m.layers = {LayerSpec::conv2d(3, 3, 1, Activation::relu), LayerSpec::flatten(),
                    LayerSpec::dense(3, Activation::softmax)};
        m.split_point = 2;
        models.push_back(m);
    }
    {
        ModelSpec m;
        m.arch_id = "gc_conv_valid";
        m.input = {1, 4, 4};
        m.layers = {LayerSpec::conv2d_padded(2, 3, 1, 0, Activation::relu),
                    LayerSpec::flatten(), LayerSpec::dense(3, Activation::softmax)};
        m.split_point = 2;
        models.push_back(m);
    }
    {
        ModelSpec m;
        m.arch_id = "gc_avgpool";
        m.input = {2, 6, 6};
        m.layers = {LayerSpec::conv2d(2, 3, 1, Activation::relu), LayerSpec::avgpool2d(2, 2),
                    LayerSpec::flatten(), LayerSpec::dense(3, Activation::softmax)};
        m.split_point = 3;
        models.push_back(m);
    }
    {
        ModelSpec m;
        m.arch_id = "gc_maxpool";
        m.input = {2, 6, 6};
        m.layers = {LayerSpec::conv2d(2, 3, 1, Activation::relu), LayerSpec::maxpool2d(2, 2),
                    LayerSpec::flatten(), LayerSpec::dense(3, Activation::softmax)};
        m.split_point = 3;
        models.push_back(m);
    }
    {
        ModelSpec m;
        m.arch_id = "gc_stack";
        m.input = {1, 8, 8};
        m.layers = {LayerSpec::conv2d(2, 3, 1, Activation::relu), LayerSpec::avgpool2d(2, 2),
                    LayerSpec::conv2d(3, 3, 1, Activation::relu), LayerSpec::maxpool2d(2, 2),
                    LayerSpec::flatten(), LayerSpec::dense(8, Activation::relu),
                    LayerSpec::dense(3, Activation::softmax)};
        m.split_point = 5;
        models.push_back(m);
    }
    return models;
}

struct InstanceResult {
    bool pass = true;
    double max_rel = 0.0;
    std::string worst;  // entry/index of the worst component
};

InstanceResult check_instance(const ModelSpec& spec, std::uint64_t seed) {
    ParamSet params = init_params(spec, seed);
    Rng rng(derive_seed(seed, "gc_batch"));
    const std::size_t batch_n = 2;
    Tensor batch = Tensor::zeros(
        {batch_n, spec.input.channels, spec.input.height, spec.input.width});
    for (double& v : batch.data) v = rng.uniform(0.0, 1.0);
    std::vector<int> labels(batch_n);
    for (int& l : labels) l = static_cast<int>(rng.index(num_classes(spec)));

    LossGrad analytic = loss_and_grad(spec, params, batch, labels);

    InstanceResult result;
    auto probe = [&](std::vector<double>& values, const std::vector<double>& grad,
                     const std::string& name, const char* part) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + kStep;
            const double up = loss_and_grad(spec, params, batch, labels).loss;
            values[i] = saved - kStep;
            const double down = loss_and_grad(spec, params, batch, labels).loss;
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * kStep);
            const double rel = std::abs(grad[i] - numeric) /
                               std::max({std::abs(grad[i]), std::abs(numeric), 1e-6});
            if (rel > result.max_rel) {
                result.max_rel = rel;
                result.worst = name + "." + part + "[" + std::to_string(i) + "]";
            }
        }
    };
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
        probe(params.entries[e].weights.data, analytic.grads.entries[e].weights.data,
              params.entries[e].name, "weights");
        probe(params.entries[e].bias.data, analytic.grads.entries[e].bias.data,
              params.entries[e].name, "bias");
    }
    result.pass = result.max_rel < kTolerance;
    return result;
}

}  // namespace

GradCheckReport run_gradient_checks(std::uint64_t seed, std::size_t instances) {
    const std::vector<ModelSpec> models = check_models();
    GradCheckReport report;
    std::ostringstream detail;
    for (std::size_t i = 0; i < instances; ++i) {
        const ModelSpec& spec = models[i % models.size()];
        InstanceResult best;
        bool passed = false;
        for (std::size_t attempt = 0; attempt < 3; ++attempt) {
            InstanceResult r =
                check_instance(spec, derive_seed(seed, "gc_instance", i, attempt));
            if (attempt == 0 || r.max_rel < best.max_rel) best = r;
            if (r.pass) {
                passed = true;
                break;
            }
            report.redraws += 1;
        }
        report.instances += 1;
        report.max_rel_error = std::max(report.max_rel_error, best.max_rel);
        if (!passed) {
            report.failures += 1;
            char buf[160];
            std::snprintf(buf, sizeof(buf), "instance %zu (%s): rel error %.3e at %s\n", i,
                          spec.arch_id.c_str(), best.max_rel, best.worst.c_str());
            detail << buf;
        }
    }
    report.detail = detail.str();
    return report;
}

std::string render_gradcheck(const GradCheckReport& report) {
    std::ostringstream out;
    out << "gradient check: " << (report.ok() ? "PASS" : "FAIL") << " (" << report.instances
        << " instances, " << report.failures << " failures, " << report.redraws
        << " redraws, max rel error ";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", report.max_rel_error);
    out << buf << ")\n";
    out << report.detail;
    return out.str();
}

}  // namespace ModFL
