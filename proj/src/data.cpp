#include "modfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "modfl/error.hpp"
#include "modfl/rng.hpp"

namespace ModFL {

namespace {

constexpr std::size_t kClasses = 9;
constexpr double kPi = 3.14159265358979323846;

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::ingestion, "cannot open '" + path + "'");
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
        fail(ErrorKind::ingestion, "cannot read '" + path + "'");
    }
    return bytes;
}

std::vector<int> count_per_class(const Dataset& ds) {
    std::vector<int> counts(kClasses, 0);
    for (int l : ds.labels) counts[static_cast<std::size_t>(l)] += 1;
    return counts;
}

}  // namespace

const std::vector<std::string>& canonical_classes() {
    static const std::vector<std::string> names = {"airplane", "automobile", "bird",
                                                   "cat",      "deer",       "dog",
                                                   "horse",    "ship",       "truck"};
    return names;
}

Dataset load_cifar10(const std::string& dir) {
    // 3073-byte records: label byte, then 32x32 R/G/B planes row-major.
    // Original label 6 (frog) has no counterpart and is dropped.
    constexpr std::size_t kRecord = 3073;
    constexpr std::size_t kPixels = 3072;
    static const int remap[10] = {0, 1, 2, 3, 4, 5, -1, 6, 7, 8};

    const std::vector<std::string> names = {"data_batch_1.bin", "data_batch_2.bin",
                                            "data_batch_3.bin", "data_batch_4.bin",
                                            "data_batch_5.bin", "test_batch.bin"};
    std::vector<std::string> present;
    for (const std::string& n : names) {
        std::filesystem::path p = std::filesystem::path(dir) / n;
        if (std::filesystem::exists(p)) present.push_back(p.string());
    }
    if (present.empty()) {
        fail(ErrorKind::ingestion, "no CIFAR-10 batch files under '" + dir + "'");
    }

    std::vector<std::uint8_t> raw_labels;
    std::vector<std::vector<std::uint8_t>> raw_pixels;
    for (const std::string& path : present) {
        std::vector<std::uint8_t> bytes = read_file(path);
        if (bytes.size() % kRecord != 0) {
            fail(ErrorKind::ingestion,
                 "'" + path + "': size " + std::to_string(bytes.size()) +
                     " is not a multiple of " + std::to_string(kRecord) +
                     " (truncated record at byte offset " +
                     std::to_string(bytes.size() - bytes.size() % kRecord) + ")");
        }
        for (std::size_t at = 0; at < bytes.size(); at += kRecord) {
            const std::uint8_t label = bytes[at];
            if (label > 9) {
                fail(ErrorKind::ingestion, "'" + path + "': label " + std::to_string(label) +
                                               " at byte offset " + std::to_string(at));
            }
            if (remap[label] < 0) continue;
            raw_labels.push_back(static_cast<std::uint8_t>(remap[label]));
            raw_pixels.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(at + 1),
                                    bytes.begin() + static_cast<std::ptrdiff_t>(at + kRecord));
        }
    }

    Dataset ds;
    ds.id = "cifar";
    ds.class_names = canonical_classes();
    const std::size_t n = raw_labels.size();
    ds.images = Tensor::zeros({n, 3, 32, 32});
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = raw_labels[i];
        double* dst = ds.images.ptr() + i * kPixels;
        const std::uint8_t* src = raw_pixels[i].data();
        for (std::size_t p = 0; p < kPixels; ++p) dst[p] = src[p] / 255.0;
    }
    return ds;
}

Dataset load_stl10(const std::string& dir) {
    // 27648-byte images: 96x96 R/G/B planes, each plane column-major.
    // Labels ship 1-indexed in a separate file; original class 8 (monkey)
    // is dropped and the rest map onto the canonical order.
    constexpr std::size_t kSide = 96;
    constexpr std::size_t kPlane = kSide * kSide;
    constexpr std::size_t kRecord = 3 * kPlane;
    static const int remap[10] = {0, 2, 1, 3, 4, 5, 6, -1, 7, 8};

    const std::vector<std::pair<std::string, std::string>> pairs = {
        {"train_X.bin", "train_y.bin"},
        {"test_X.bin", "test_y.bin"},
    };
    std::vector<std::pair<std::string, std::string>> present;
    for (const auto& [xf, yf] : pairs) {
        std::filesystem::path xp = std::filesystem::path(dir) / xf;
        std::filesystem::path yp = std::filesystem::path(dir) / yf;
        if (std::filesystem::exists(xp) && std::filesystem::exists(yp)) {
            present.emplace_back(xp.string(), yp.string());
        }
    }
    if (present.empty()) {
        fail(ErrorKind::ingestion, "no STL-10 image/label file pairs under '" + dir + "'");
    }

    std::vector<int> labels;
    std::vector<std::size_t> keep_offsets;
    std::vector<std::vector<std::uint8_t>> blobs;
    for (const auto& [xpath, ypath] : present) {
        std::vector<std::uint8_t> x = read_file(xpath);
        std::vector<std::uint8_t> y = read_file(ypath);
        if (x.size() % kRecord != 0) {
            fail(ErrorKind::ingestion, "'" + xpath + "': size " + std::to_string(x.size()) +
                                           " is not a multiple of " + std::to_string(kRecord));
        }
        if (x.size() / kRecord != y.size()) {
            fail(ErrorKind::ingestion,
                 "'" + xpath + "' holds " + std::to_string(x.size() / kRecord) +
                     " images but '" + ypath + "' holds " + std::to_string(y.size()) +
                     " labels");
        }
        const std::size_t blob = blobs.size();
        blobs.push_back(std::move(x));
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y[i] < 1 || y[i] > 10) {
                fail(ErrorKind::ingestion, "'" + ypath + "': label " + std::to_string(y[i]) +
                                               " at index " + std::to_string(i) +
                                               " outside 1..10");
            }
            const int mapped = remap[y[i] - 1];
            if (mapped < 0) continue;
            labels.push_back(mapped);
            keep_offsets.push_back(blob << 48 | i * kRecord);
        }
    }

    Dataset ds;
    ds.id = "stl";
    ds.class_names = canonical_classes();
    const std::size_t n = labels.size();
    ds.images = Tensor::zeros({n, 3, kSide, kSide});
    ds.labels = std::move(labels);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* src = blobs[keep_offsets[i] >> 48].data() +
                                  (keep_offsets[i] & ((1ull << 48) - 1));
        double* dst = ds.images.ptr() + i * kRecord;
        for (std::size_t c = 0; c < 3; ++c) {
            const std::uint8_t* plane = src + c * kPlane;
            double* out = dst + c * kPlane;
            for (std::size_t col = 0; col < kSide; ++col) {
                for (std::size_t row = 0; row < kSide; ++row) {
                    out[row * kSide + col] = plane[col * kSide + row] / 255.0;
                }
            }
        }
    }
    return ds;
}

Dataset generate_synthetic(std::size_t resolution, std::size_t n_per_class,
                           std::uint64_t seed, double noise_sigma) {
    if (resolution != 16 && resolution != 32) {
        fail(ErrorKind::data, "synthetic resolution must be 16 or 32, got " +
                                  std::to_string(resolution));
    }
    if (n_per_class == 0) fail(ErrorKind::data, "n_per_class must be positive");
    if (!(noise_sigma >= 0.0)) fail(ErrorKind::data, "noise_sigma must be nonnegative");

    // class c renders a grating with orientation (c/3)*60 degrees and
    // c%3 + 2 cycles across the image; phase is random per sample so the
    // class signal is the (orientation, frequency) pair, not pixel values
    const std::size_t n = kClasses * n_per_class;
    Dataset ds;
    ds.id = resolution == 16 ? "synth_lo" : "synth_hi";
    ds.class_names = canonical_classes();
    ds.images = Tensor::zeros({n, 1, resolution, resolution});
    ds.labels.resize(n);

    Rng rng(seed);
    const double inv = 1.0 / static_cast<double>(resolution);
    std::size_t at = 0;
    for (std::size_t s = 0; s < n_per_class; ++s) {
        for (std::size_t c = 0; c < kClasses; ++c, ++at) {
            ds.labels[at] = static_cast<int>(c);
            const double theta = static_cast<double>(c / 3) * kPi / 3.0;
            const double freq = static_cast<double>(c % 3) + 2.0;
            const double phase = rng.uniform(0.0, 2.0 * kPi);
            const double ct = std::cos(theta), st = std::sin(theta);
            double* img = ds.images.ptr() + at * resolution * resolution;
            for (std::size_t y = 0; y < resolution; ++y) {
                for (std::size_t x = 0; x < resolution; ++x) {
                    const double u = (static_cast<double>(x) + 0.5) * inv;
                    const double v = (static_cast<double>(y) + 0.5) * inv;
                    const double t = u * ct + v * st;
                    double val = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * t + phase) +
                                 noise_sigma * rng.gaussian();
                    img[y * resolution + x] = std::clamp(val, 0.0, 1.0);
                }
            }
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> even_and_split(const Dataset& ds, std::size_t total,
                                           double train_ratio, std::uint64_t seed) {
    if (total == 0 || total % kClasses != 0) {
        fail(ErrorKind::data,
             "total " + std::to_string(total) + " is not divisible by " +
                 std::to_string(kClasses));
    }
    if (train_ratio <= 0.0 || train_ratio >= 1.0) {
        fail(ErrorKind::data, "train_ratio must lie strictly between 0 and 1");
    }
    const std::size_t per_class = total / kClasses;
    const std::size_t train_pc =
        static_cast<std::size_t>(std::llround(static_cast<double>(per_class) * train_ratio));
    if (train_pc == 0 || train_pc >= per_class) {
        fail(ErrorKind::data, "train_ratio leaves an empty train or test split");
    }

    std::vector<int> counts = count_per_class(ds);
    for (std::size_t c = 0; c < kClasses; ++c) {
        if (static_cast<std::size_t>(counts[c]) < per_class) {
            fail(ErrorKind::data, "dataset '" + ds.id + "' class '" + ds.class_names[c] +
                                      "' has " + std::to_string(counts[c]) +
                                      " samples, need " + std::to_string(per_class));
        }
    }

    std::vector<std::vector<std::int32_t>> by_class(kClasses);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(
            static_cast<std::int32_t>(i));
    }

    std::vector<std::int32_t> train_idx, test_idx;
    train_idx.reserve(kClasses * train_pc);
    test_idx.reserve(kClasses * (per_class - train_pc));
    for (std::size_t c = 0; c < kClasses; ++c) {
        Rng rng(derive_seed(seed, "even_split", c));
        rng.shuffle(by_class[c]);
        for (std::size_t i = 0; i < per_class; ++i) {
            (i < train_pc ? train_idx : test_idx).push_back(by_class[c][i]);
        }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    auto materialize = [&](const std::vector<std::int32_t>& idx) {
        Dataset out;
        out.id = ds.id;
        out.class_names = ds.class_names;
        out.images = gather_batch(ds.images, idx, 0, idx.size());
        out.labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out.labels[i] = ds.labels[static_cast<std::size_t>(idx[i])];
        }
        return out;
    };
    return {materialize(train_idx), materialize(test_idx)};
}

double evaluate(const ModelSpec& spec, const ParamSet& params, const Dataset& test) {
    return evaluate(spec, params, test.images, test.labels, {});
}

}  // namespace ModFL
