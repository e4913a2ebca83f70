#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "modfl/nn.hpp"
#include "modfl/tensor.hpp"

namespace ModFL {

// A labeled image collection over the canonical nine classes. Pixel values
// live in [0,1]; images is (N, C, H, W).
struct Dataset {
    std::string id;
    Tensor images;
    std::vector<int> labels;
    std::vector<std::string> class_names;

    std::size_t size() const { return labels.size(); }
};

// The nine classes shared by both image datasets, in canonical label order.
const std::vector<std::string>& canonical_classes();

// Reads the binary batch files (data_batch_*.bin, test_batch.bin) found
// under dir. Drops the one class without a counterpart and remaps labels to
// the canonical order.
Dataset load_cifar10(const std::string& dir);

// Reads train/test image+label binary pairs found under dir. Planes are
// stored column-major; labels are 1-indexed on disk.
Dataset load_stl10(const std::string& dir);

// Nine classes of oriented sinusoidal gratings with per-sample random phase
// and additive Gaussian pixel noise of the given sigma, rendered at 16x16 or
// 32x32. The class semantics are resolution-independent so two device
// generations can share the task; sigma sets how many samples a client needs
// before the class signal dominates.
Dataset generate_synthetic(std::size_t resolution, std::size_t n_per_class, std::uint64_t seed,
                           double noise_sigma = 0.35);

// Balanced subsample of exactly `total` samples followed by a stratified
// train/test split. Deterministic under seed.
std::pair<Dataset, Dataset> even_and_split(const Dataset& ds, std::size_t total,
                                           double train_ratio, std::uint64_t seed);

// Accuracy of the model over an entire dataset (argmax vs. label).
double evaluate(const ModelSpec& spec, const ParamSet& params, const Dataset& test);

}  // namespace ModFL
