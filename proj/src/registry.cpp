#include "modfl/registry.hpp"

#include <algorithm>
#include <sstream>

#include "modfl/error.hpp"

namespace ModFL {

namespace {

constexpr std::size_t kClasses = 9;
constexpr std::size_t kEmbedding = 256;

std::vector<LayerSpec> operation_stack() {
    return {
        LayerSpec::dense(128, Activation::relu),
        LayerSpec::dense(64, Activation::relu),
        LayerSpec::dense(kClasses, Activation::softmax),
    };
}

}  // namespace

const std::vector<std::string>& arch_ids() {
    static const std::vector<std::string> ids = {"cifar_gen", "stl_gen", "synth_lo", "synth_hi"};
    return ids;
}

bool is_known_arch(const std::string& arch_id) {
    const auto& ids = arch_ids();
    return std::find(ids.begin(), ids.end(), arch_id) != ids.end();
}

ModelSpec build_arch(const std::string& arch_id, std::size_t op_layers) {
    ModelSpec spec;
    spec.arch_id = arch_id;
    if (arch_id == "cifar_gen") {
        spec.input = {3, 32, 32};
        spec.layers = {
            LayerSpec::conv2d(32, 3, 1, Activation::relu),
            LayerSpec::avgpool2d(2, 2),
            LayerSpec::conv2d(64, 3, 1, Activation::relu),
            LayerSpec::avgpool2d(2, 2),
            LayerSpec::conv2d(128, 3, 1, Activation::relu),
            LayerSpec::avgpool2d(2, 2),
            LayerSpec::flatten(),
            LayerSpec::dense(kEmbedding, Activation::relu),
        };
    } else if (arch_id == "stl_gen") {
        spec.input = {3, 96, 96};
        spec.layers = {
            LayerSpec::conv2d(16, 3, 1, Activation::relu),
            LayerSpec::maxpool2d(2, 2),
            LayerSpec::conv2d(32, 3, 1, Activation::relu),
            LayerSpec::maxpool2d(2, 2),
            LayerSpec::conv2d(64, 3, 1, Activation::relu),
            LayerSpec::maxpool2d(2, 2),
            LayerSpec::conv2d(128, 3, 1, Activation::relu),
            LayerSpec::maxpool2d(2, 2),
            LayerSpec::flatten(),
            LayerSpec::dense(kEmbedding, Activation::relu),
        };
    } else if (arch_id == "synth_lo") {
        spec.input = {1, 16, 16};
        spec.layers = {
            LayerSpec::conv2d(8, 3, 1, Activation::relu),
            LayerSpec::avgpool2d(2, 2),
            LayerSpec::conv2d(16, 3, 1, Activation::relu),
            LayerSpec::avgpool2d(2, 2),
            LayerSpec::flatten(),
            LayerSpec::dense(kEmbedding, Activation::relu),
        };
    } else if (arch_id == "synth_hi") {
        spec.input = {1, 32, 32};
        spec.layers = {
            LayerSpec::conv2d(8, 3, 1, Activation::relu),
            LayerSpec::avgpool2d(2, 2),
            LayerSpec::conv2d(16, 3, 1, Activation::relu),
            LayerSpec::avgpool2d(2, 2),
            LayerSpec::conv2d(32, 3, 1, Activation::relu),
            LayerSpec::avgpool2d(2, 2),
            LayerSpec::flatten(),
            LayerSpec::dense(kEmbedding, Activation::relu),
        };
    } else {
        std::ostringstream out;
        out << "unknown architecture '" << arch_id << "' (known:";
        for (const std::string& id : arch_ids()) out << " " << id;
        out << ")";
        fail(ErrorKind::registry, out.str());
    }
    for (const LayerSpec& l : operation_stack()) spec.layers.push_back(l);

    if (op_layers == 0 || op_layers >= spec.layers.size()) {
        fail(ErrorKind::registry,
             "op_layers=" + std::to_string(op_layers) + " must be in [1, " +
                 std::to_string(spec.layers.size() - 1) + "] for '" + arch_id + "'");
    }
    spec.split_point = spec.layers.size() - op_layers;
    validate_spec(spec);
    return spec;
}

std::pair<ParamSet, ParamSet> split_modules(const ModelSpec& spec, const ParamSet& params) {
    ParamSet tmpl = param_template(spec);
    if (!tmpl.shape_compatible(params)) {
        fail(ErrorKind::shape,
             "parameters do not match model '" + spec.arch_id + "' when splitting");
    }
    ParamSet config, operation;
    for (const ParamEntry& e : params.entries) {
        (e.name[0] == 'c' ? config : operation).entries.push_back(e);
    }
    return {std::move(config), std::move(operation)};
}

ParamSet concat_modules(const ModelSpec& spec, const ParamSet& config,
                        const ParamSet& operation) {
    ParamSet out;
    out.entries.reserve(config.entries.size() + operation.entries.size());
    for (const ParamEntry& e : config.entries) out.entries.push_back(e);
    for (const ParamEntry& e : operation.entries) out.entries.push_back(e);
    ParamSet tmpl = param_template(spec);
    if (!tmpl.shape_compatible(out)) {
        fail(ErrorKind::shape,
             "config+operation modules do not assemble into model '" + spec.arch_id + "'");
    }
    return out;
}

ParamSet config_template(const ModelSpec& spec) {
    return split_modules(spec, param_template(spec)).first;
}

ParamSet operation_template(const ModelSpec& spec) {
    return split_modules(spec, param_template(spec)).second;
}

void check_operation_compatibility(const std::vector<ModelSpec>& specs) {
    if (specs.empty()) return;
    ParamSet ref = operation_template(specs[0]);
    for (std::size_t i = 1; i < specs.size(); ++i) {
        ParamSet other = operation_template(specs[i]);
        if (!ref.shape_compatible(other)) {
            fail(ErrorKind::compatibility,
                 "operation modules of '" + specs[0].arch_id + "' and '" + specs[i].arch_id +
                     "' have different parameter layouts and cannot share a group");
        }
    }
}

}  // namespace ModFL
