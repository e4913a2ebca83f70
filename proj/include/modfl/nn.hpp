#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "modfl/tensor.hpp"

namespace ModFL {

enum class LayerKind { dense, conv2d, avgpool2d, maxpool2d, flatten };
enum class Activation { none, relu, softmax };

const char* to_string(LayerKind kind);
const char* to_string(Activation act);

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t units = 0;  // dense output features / conv output channels
    std::size_t kernel_h = 0, kernel_w = 0;
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pad_h = 0, pad_w = 0;
    Activation activation = Activation::none;

    static LayerSpec dense(std::size_t units, Activation act = Activation::relu);
    // pad defaults to (k-1)/2, which keeps spatial dims at stride 1
    static LayerSpec conv2d(std::size_t channels, std::size_t kernel = 3,
                            std::size_t stride = 1, Activation act = Activation::relu);
    static LayerSpec conv2d_padded(std::size_t channels, std::size_t kernel,
                                   std::size_t stride, std::size_t pad,
                                   Activation act = Activation::relu);
    static LayerSpec avgpool2d(std::size_t kernel = 2, std::size_t stride = 2);
    static LayerSpec maxpool2d(std::size_t kernel = 2, std::size_t stride = 2);
    static LayerSpec flatten();

    bool operator==(const LayerSpec&) const = default;
};

struct InputShape {
    std::size_t channels = 0, height = 0, width = 0;
    bool operator==(const InputShape&) const = default;
};

struct ModelSpec {
    std::string arch_id;
    std::vector<LayerSpec> layers;
    InputShape input;
    std::size_t split_point = 0;  // index of the first operation-module layer
};

struct ParamEntry {
    std::string name;
    Tensor weights;
    Tensor bias;
    bool operator==(const ParamEntry&) const = default;
};

struct ParamSet {
    std::vector<ParamEntry> entries;

    // identical (name, shape) sequences
    bool shape_compatible(const ParamSet& other) const;
    std::size_t value_count() const;
    const ParamEntry* find(const std::string& name) const;

    bool operator==(const ParamSet&) const = default;
};

struct AdamState {
    std::uint64_t step = 0;
    ParamSet m, v;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

AdamState make_adam_state(const ParamSet& params, double lr = 0.001);

// throws ErrorKind::spec on malformed layer lists
void validate_spec(const ModelSpec& spec);

// per-layer output shapes, batch dimension excluded
std::vector<std::vector<std::size_t>> trace_shapes(const ModelSpec& spec);

std::size_t num_classes(const ModelSpec& spec);

// zero-valued parameters with the names and shapes the model spec demands
ParamSet param_template(const ModelSpec& spec);

// He-uniform weights (bound sqrt(6/fan_in)), zero biases; bit-reproducible
// for a given (spec, seed)
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

struct ForwardCache {
    std::vector<Tensor> outputs;                      // per layer, post-activation
    std::vector<Tensor> cols;                         // im2col buffers for conv layers
    std::vector<std::vector<std::uint32_t>> argmax;   // winner offsets for maxpool layers
    Tensor final_preact;                              // pre-softmax logits
};

struct ForwardResult {
    Tensor output;  // (batch, num_classes); softmax rows when the final layer asks for it
    ForwardCache cache;
};

ForwardResult forward(const ModelSpec& spec, const ParamSet& params, const Tensor& batch);

struct LossGrad {
    double loss = 0.0;
    ParamSet grads;
};

// mean softmax cross-entropy over the batch and its gradient w.r.t. params
LossGrad loss_and_grad(const ModelSpec& spec, const ParamSet& params,
                       const Tensor& batch, const std::vector<int>& labels);

void adam_step_inplace(ParamSet& params, const ParamSet& grads, AdamState& state);
std::pair<ParamSet, AdamState> adam_step(const ParamSet& params, const ParamSet& grads,
                                         const AdamState& state);

// batch gather from (N, C, H, W) images at the given sample indices
Tensor gather_batch(const Tensor& images, const std::vector<std::int32_t>& indices,
                    std::size_t first, std::size_t count);

struct EvalMetrics {
    double accuracy = 0.0;
    double loss = 0.0;
    std::size_t count = 0;
};

// argmax accuracy (ties to the lowest class index) plus mean cross-entropy,
// over the listed sample indices (all samples if empty)
EvalMetrics evaluate_metrics(const ModelSpec& spec, const ParamSet& params,
                             const Tensor& images, const std::vector<int>& labels,
                             const std::vector<std::int32_t>& indices = {},
                             std::size_t batch_size = 64);

double evaluate(const ModelSpec& spec, const ParamSet& params,
                const Tensor& images, const std::vector<int>& labels,
                const std::vector<std::int32_t>& indices = {});

}  // namespace ModFL
