#include "modfl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "modfl/error.hpp"
#include "modfl/gemm.hpp"
#include "modfl/rng.hpp"

namespace ModFL {

const char* to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::avgpool2d: return "avgpool2d";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

const char* to_string(Activation act) {
    switch (act) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::softmax: return "softmax";
    }
    return "?";
}

LayerSpec LayerSpec::dense(std::size_t units, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.units = units;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t channels, std::size_t kernel, std::size_t stride,
                            Activation act) {
    return conv2d_padded(channels, kernel, stride, (kernel - 1) / 2, act);
}

LayerSpec LayerSpec::conv2d_padded(std::size_t channels, std::size_t kernel, std::size_t stride,
                                   std::size_t pad, Activation act) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.units = channels;
    s.kernel_h = s.kernel_w = kernel;
    s.stride_h = s.stride_w = stride;
    s.pad_h = s.pad_w = pad;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::avgpool2d(std::size_t kernel, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::avgpool2d;
    s.kernel_h = s.kernel_w = kernel;
    s.stride_h = s.stride_w = stride;
    return s;
}

LayerSpec LayerSpec::maxpool2d(std::size_t kernel, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::maxpool2d;
    s.kernel_h = s.kernel_w = kernel;
    s.stride_h = s.stride_w = stride;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::flatten;
    return s;
}

bool ParamSet::shape_compatible(const ParamSet& other) const {
    if (entries.size() != other.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const ParamEntry& a = entries[i];
        const ParamEntry& b = other.entries[i];
        if (a.name != b.name || a.weights.shape != b.weights.shape ||
            a.bias.shape != b.bias.shape) {
            return false;
        }
    }
    return true;
}

std::size_t ParamSet::value_count() const {
    std::size_t n = 0;
    for (const ParamEntry& e : entries) n += e.weights.numel() + e.bias.numel();
    return n;
}

const ParamEntry* ParamSet::find(const std::string& name) const {
    for (const ParamEntry& e : entries) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

AdamState make_adam_state(const ParamSet& params, double lr) {
    AdamState st;
    st.lr = lr;
    st.m.entries.reserve(params.entries.size());
    st.v.entries.reserve(params.entries.size());
    for (const ParamEntry& e : params.entries) {
        st.m.entries.push_back({e.name, Tensor::zeros(e.weights.shape), Tensor::zeros(e.bias.shape)});
        st.v.entries.push_back({e.name, Tensor::zeros(e.weights.shape), Tensor::zeros(e.bias.shape)});
    }
    return st;
}

namespace {

[[noreturn]] void spec_fail(const ModelSpec& spec, std::size_t layer, const std::string& what) {
    std::ostringstream out;
    out << "model '" << spec.arch_id << "' layer " << layer << ": " << what;
    fail(ErrorKind::spec, out.str());
}

[[noreturn]] void shape_fail(const ModelSpec& spec, std::size_t layer, const std::string& what) {
    std::ostringstream out;
    out << "model '" << spec.arch_id << "' layer " << layer << " ("
        << to_string(spec.layers[layer].kind) << "): " << what;
    fail(ErrorKind::shape, out.str());
}

std::string param_name(const ModelSpec& spec, std::size_t layer) {
    // module-relative index keeps operation-module names identical across
    // architectures with different split points
    std::size_t rel = layer < spec.split_point ? layer : layer - spec.split_point;
    char prefix = layer < spec.split_point ? 'c' : 'o';
    std::string kind = spec.layers[layer].kind == LayerKind::conv2d ? "conv" : "dense";
    return std::string(1, prefix) + std::to_string(rel) + "_" + kind;
}

std::size_t pooled_dim(std::size_t in, std::size_t k, std::size_t s) {
    return (in - k) / s + 1;
}

}  // namespace

void validate_spec(const ModelSpec& spec) {
    if (spec.layers.empty()) fail(ErrorKind::spec, "model '" + spec.arch_id + "' has no layers");
    if (spec.input.channels == 0 || spec.input.height == 0 || spec.input.width == 0) {
        fail(ErrorKind::spec, "model '" + spec.arch_id + "' has an empty input shape");
    }
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::dense:
                if (l.units == 0) spec_fail(spec, i, "dense layer with zero units");
                break;
            case LayerKind::conv2d:
                if (l.units == 0) spec_fail(spec, i, "conv layer with zero channels");
                if (l.kernel_h == 0 || l.kernel_w == 0) spec_fail(spec, i, "zero kernel");
                if (l.stride_h == 0 || l.stride_w == 0) spec_fail(spec, i, "zero stride");
                break;
            case LayerKind::avgpool2d:
            case LayerKind::maxpool2d:
                if (l.kernel_h == 0 || l.kernel_w == 0) spec_fail(spec, i, "zero kernel");
                if (l.stride_h == 0 || l.stride_w == 0) spec_fail(spec, i, "zero stride");
                if (l.activation != Activation::none) {
                    spec_fail(spec, i, "pooling layers take no activation");
                }
                break;
            case LayerKind::flatten:
                if (l.activation != Activation::none) {
                    spec_fail(spec, i, "flatten takes no activation");
                }
                break;
        }
        if (l.activation == Activation::softmax && i + 1 != spec.layers.size()) {
            spec_fail(spec, i, "softmax is permitted only on the final layer");
        }
    }
}

std::vector<std::vector<std::size_t>> trace_shapes(const ModelSpec& spec) {
    validate_spec(spec);
    std::vector<std::vector<std::size_t>> shapes;
    shapes.reserve(spec.layers.size());
    std::vector<std::size_t> cur = {spec.input.channels, spec.input.height, spec.input.width};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::conv2d: {
                if (cur.size() != 3) shape_fail(spec, i, "conv needs a (C,H,W) input");
                std::size_t h = cur[1] + 2 * l.pad_h;
                std::size_t w = cur[2] + 2 * l.pad_w;
                if (h < l.kernel_h || w < l.kernel_w) {
                    shape_fail(spec, i, "kernel larger than padded input");
                }
                cur = {l.units, pooled_dim(h, l.kernel_h, l.stride_h),
                       pooled_dim(w, l.kernel_w, l.stride_w)};
                break;
            }
            case LayerKind::avgpool2d:
            case LayerKind::maxpool2d: {
                if (cur.size() != 3) shape_fail(spec, i, "pooling needs a (C,H,W) input");
                if (cur[1] < l.kernel_h || cur[2] < l.kernel_w) {
                    shape_fail(spec, i, "pool window larger than input");
                }
                cur = {cur[0], pooled_dim(cur[1], l.kernel_h, l.stride_h),
                       pooled_dim(cur[2], l.kernel_w, l.stride_w)};
                break;
            }
            case LayerKind::flatten: {
                if (cur.size() != 3) shape_fail(spec, i, "flatten needs a (C,H,W) input");
                cur = {cur[0] * cur[1] * cur[2]};
                break;
            }
            case LayerKind::dense: {
                if (cur.size() != 1) shape_fail(spec, i, "dense needs a flattened input");
                cur = {l.units};
                break;
            }
        }
        shapes.push_back(cur);
    }
    return shapes;
}

std::size_t num_classes(const ModelSpec& spec) {
    if (spec.layers.empty() || spec.layers.back().kind != LayerKind::dense) {
        fail(ErrorKind::spec, "model '" + spec.arch_id + "' does not end in a dense layer");
    }
    return spec.layers.back().units;
}

ParamSet param_template(const ModelSpec& spec) {
    auto shapes = trace_shapes(spec);
    ParamSet out;
    std::vector<std::size_t> cur = {spec.input.channels, spec.input.height, spec.input.width};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.kind == LayerKind::conv2d) {
            out.entries.push_back({param_name(spec, i),
                                   Tensor::zeros({l.units, cur[0], l.kernel_h, l.kernel_w}),
                                   Tensor::zeros({l.units})});
        } else if (l.kind == LayerKind::dense) {
            out.entries.push_back({param_name(spec, i), Tensor::zeros({l.units, cur[0]}),
                                   Tensor::zeros({l.units})});
        }
        cur = shapes[i];
    }
    return out;
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
    ParamSet out = param_template(spec);
    Rng rng(seed);
    for (ParamEntry& e : out.entries) {
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < e.weights.shape.size(); ++d) fan_in *= e.weights.shape[d];
        double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& w : e.weights.data) w = rng.uniform(-bound, bound);
        // biases stay zero
    }
    return out;
}

namespace {

void check_params(const ModelSpec& spec, const ParamSet& params) {
    ParamSet tmpl = param_template(spec);
    if (!tmpl.shape_compatible(params)) {
        std::ostringstream out;
        out << "parameters do not match model '" << spec.arch_id << "': expected [";
        for (std::size_t i = 0; i < tmpl.entries.size(); ++i) {
            if (i) out << ", ";
            out << tmpl.entries[i].name << shape_str(tmpl.entries[i].weights.shape);
        }
        out << "], got [";
        for (std::size_t i = 0; i < params.entries.size(); ++i) {
            if (i) out << ", ";
            out << params.entries[i].name << shape_str(params.entries[i].weights.shape);
        }
        out << "]";
        fail(ErrorKind::shape, out.str());
    }
}

void im2col(const double* x, std::size_t c_in, std::size_t h, std::size_t w,
            const LayerSpec& l, std::size_t oh, std::size_t ow, double* col) {
    const std::size_t plane = oh * ow;
    for (std::size_t c = 0; c < c_in; ++c) {
        const double* xc = x + c * h * w;
        for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
            for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
                double* dst = col + ((c * l.kernel_h + kh) * l.kernel_w + kw) * plane;
                for (std::size_t y = 0; y < oh; ++y) {
                    std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * l.stride_h + kh) -
                                        static_cast<std::ptrdiff_t>(l.pad_h);
                    double* drow = dst + y * ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                        std::memset(drow, 0, ow * sizeof(double));
                        continue;
                    }
                    const double* xrow = xc + static_cast<std::size_t>(iy) * w;
                    for (std::size_t xo = 0; xo < ow; ++xo) {
                        std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * l.stride_w + kw) -
                                            static_cast<std::ptrdiff_t>(l.pad_w);
                        drow[xo] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                                       ? 0.0
                                       : xrow[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, std::size_t c_in, std::size_t h, std::size_t w,
                const LayerSpec& l, std::size_t oh, std::size_t ow, double* x) {
    const std::size_t plane = oh * ow;
    for (std::size_t c = 0; c < c_in; ++c) {
        double* xc = x + c * h * w;
        for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
            for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
                const double* src = col + ((c * l.kernel_h + kh) * l.kernel_w + kw) * plane;
                for (std::size_t y = 0; y < oh; ++y) {
                    std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * l.stride_h + kh) -
                                        static_cast<std::ptrdiff_t>(l.pad_h);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    double* xrow = xc + static_cast<std::size_t>(iy) * w;
                    const double* srow = src + y * ow;
                    for (std::size_t xo = 0; xo < ow; ++xo) {
                        std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * l.stride_w + kw) -
                                            static_cast<std::ptrdiff_t>(l.pad_w);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        xrow[static_cast<std::size_t>(ix)] += srow[xo];
                    }
                }
            }
        }
    }
}

void apply_relu(Tensor& t) {
    for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

// rowwise stable softmax; logits preserved by the caller when needed
void apply_softmax(Tensor& t, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* row = t.ptr() + i * cols;
        double mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < cols; ++j) row[j] /= sum;
    }
}

}  // namespace

ForwardResult forward(const ModelSpec& spec, const ParamSet& params, const Tensor& batch) {
    auto shapes = trace_shapes(spec);
    check_params(spec, params);
    if (batch.shape.size() != 4 || batch.shape[1] != spec.input.channels ||
        batch.shape[2] != spec.input.height || batch.shape[3] != spec.input.width) {
        fail(ErrorKind::shape, "model '" + spec.arch_id + "': batch shape " +
                                   shape_str(batch.shape) + " does not match input (N, " +
                                   std::to_string(spec.input.channels) + ", " +
                                   std::to_string(spec.input.height) + ", " +
                                   std::to_string(spec.input.width) + ")");
    }
    const std::size_t n = batch.shape[0];

    ForwardResult res;
    ForwardCache& cache = res.cache;
    cache.outputs.resize(spec.layers.size());
    cache.cols.resize(spec.layers.size());
    cache.argmax.resize(spec.layers.size());

    std::vector<std::size_t> in_shape = {spec.input.channels, spec.input.height,
                                         spec.input.width};
    std::size_t param_idx = 0;
    std::vector<double> w_t;  // scratch for transposed weights

    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const Tensor& src = i == 0 ? batch : cache.outputs[i - 1];
        std::vector<std::size_t> out_dims = shapes[i];
        std::vector<std::size_t> full = out_dims;
        full.insert(full.begin(), n);
        Tensor dst = Tensor::zeros(full);

        switch (l.kind) {
            case LayerKind::conv2d: {
                const ParamEntry& pe = params.entries[param_idx++];
                const std::size_t c_in = in_shape[0], h = in_shape[1], w = in_shape[2];
                const std::size_t oc = out_dims[0], oh = out_dims[1], ow = out_dims[2];
                const std::size_t k = c_in * l.kernel_h * l.kernel_w;
                const std::size_t plane = oh * ow;
                cache.cols[i] = Tensor::zeros({n, k, plane});
                for (std::size_t s = 0; s < n; ++s) {
                    double* col = cache.cols[i].ptr() + s * k * plane;
                    im2col(src.ptr() + s * c_in * h * w, c_in, h, w, l, oh, ow, col);
                    matmul(pe.weights.ptr(), col, dst.ptr() + s * oc * plane, oc, k, plane);
                }
                for (std::size_t s = 0; s < n; ++s) {
                    double* out = dst.ptr() + s * oc * plane;
                    for (std::size_t c = 0; c < oc; ++c) {
                        const double b = pe.bias.data[c];
                        double* row = out + c * plane;
                        for (std::size_t p = 0; p < plane; ++p) row[p] += b;
                    }
                }
                break;
            }
            case LayerKind::dense: {
                const ParamEntry& pe = params.entries[param_idx++];
                const std::size_t in_dim = in_shape[0], out_dim = out_dims[0];
                w_t.resize(in_dim * out_dim);
                transpose(pe.weights.ptr(), w_t.data(), out_dim, in_dim);
                matmul(src.ptr(), w_t.data(), dst.ptr(), n, in_dim, out_dim);
                for (std::size_t s = 0; s < n; ++s) {
                    double* row = dst.ptr() + s * out_dim;
                    for (std::size_t j = 0; j < out_dim; ++j) row[j] += pe.bias.data[j];
                }
                break;
            }
            case LayerKind::avgpool2d: {
                const std::size_t c_in = in_shape[0], h = in_shape[1], w = in_shape[2];
                const std::size_t oh = out_dims[1], ow = out_dims[2];
                const double inv = 1.0 / static_cast<double>(l.kernel_h * l.kernel_w);
                for (std::size_t s = 0; s < n; ++s) {
                    for (std::size_t c = 0; c < c_in; ++c) {
                        const double* xc = src.ptr() + (s * c_in + c) * h * w;
                        double* oc_ = dst.ptr() + (s * c_in + c) * oh * ow;
                        for (std::size_t y = 0; y < oh; ++y) {
                            for (std::size_t x = 0; x < ow; ++x) {
                                double acc = 0.0;
                                for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
                                    const double* row = xc + (y * l.stride_h + kh) * w +
                                                        x * l.stride_w;
                                    for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
                                        acc += row[kw];
                                    }
                                }
                                oc_[y * ow + x] = acc * inv;
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::maxpool2d: {
                const std::size_t c_in = in_shape[0], h = in_shape[1], w = in_shape[2];
                const std::size_t oh = out_dims[1], ow = out_dims[2];
                cache.argmax[i].assign(n * c_in * oh * ow, 0);
                for (std::size_t s = 0; s < n; ++s) {
                    for (std::size_t c = 0; c < c_in; ++c) {
                        const double* xc = src.ptr() + (s * c_in + c) * h * w;
                        double* oc_ = dst.ptr() + (s * c_in + c) * oh * ow;
                        std::uint32_t* am = cache.argmax[i].data() + (s * c_in + c) * oh * ow;
                        for (std::size_t y = 0; y < oh; ++y) {
                            for (std::size_t x = 0; x < ow; ++x) {
                                double best = -1e308;
                                std::uint32_t best_off = 0;
                                for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
                                    for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
                                        std::size_t off = (y * l.stride_h + kh) * w +
                                                          x * l.stride_w + kw;
                                        if (xc[off] > best) {
                                            best = xc[off];
                                            best_off = static_cast<std::uint32_t>(off);
                                        }
                                    }
                                }
                                oc_[y * ow + x] = best;
                                am[y * ow + x] = best_off;
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::flatten: {
                dst.data = src.data;
                break;
            }
        }

        if (l.activation == Activation::relu) {
            apply_relu(dst);
        } else if (l.activation == Activation::softmax) {
            cache.final_preact = dst;
            apply_softmax(dst, n, out_dims[0]);
        }
        cache.outputs[i] = std::move(dst);
        in_shape = out_dims;
    }

    res.output = cache.outputs.back();
    return res;
}

LossGrad loss_and_grad(const ModelSpec& spec, const ParamSet& params, const Tensor& batch,
                       const std::vector<int>& labels) {
    if (spec.layers.empty() || spec.layers.back().activation != Activation::softmax) {
        fail(ErrorKind::spec, "model '" + spec.arch_id + "' must end in a softmax layer");
    }
    const std::size_t n = batch.shape.empty() ? 0 : batch.shape[0];
    if (n == 0) fail(ErrorKind::data, "empty batch");
    if (labels.size() != n) {
        fail(ErrorKind::data, "batch of " + std::to_string(n) + " samples with " +
                                  std::to_string(labels.size()) + " labels");
    }
    const std::size_t classes = num_classes(spec);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            fail(ErrorKind::data, "label " + std::to_string(labels[i]) + " at sample " +
                                      std::to_string(i) + " outside [0, " +
                                      std::to_string(classes) + ")");
        }
    }

    ForwardResult fwd = forward(spec, params, batch);
    ForwardCache& cache = fwd.cache;
    auto shapes = trace_shapes(spec);

    // mean cross-entropy from the pre-softmax logits, log-sum-exp form
    double loss = 0.0;
    {
        const double* z = cache.final_preact.ptr();
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = z + i * classes;
            double mx = row[0];
            for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < classes; ++j) sum += std::exp(row[j] - mx);
            loss += mx + std::log(sum) - row[static_cast<std::size_t>(labels[i])];
        }
        loss /= static_cast<double>(n);
    }

    // d(loss)/d(final pre-activation) = (softmax - onehot) / n
    Tensor g = fwd.output;
    {
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            double* row = g.ptr() + i * classes;
            row[static_cast<std::size_t>(labels[i])] -= 1.0;
            for (std::size_t j = 0; j < classes; ++j) row[j] *= inv;
        }
    }

    ParamSet grads = param_template(spec);
    std::size_t param_idx = grads.entries.size();
    std::vector<double> scratch;

    for (std::size_t i = spec.layers.size(); i-- > 0;) {
        const LayerSpec& l = spec.layers[i];
        const Tensor& src = i == 0 ? batch : cache.outputs[i - 1];
        const std::vector<std::size_t>& out_dims = shapes[i];
        std::vector<std::size_t> in_dims =
            i == 0 ? std::vector<std::size_t>{spec.input.channels, spec.input.height,
                                              spec.input.width}
                   : shapes[i - 1];

        if (l.activation == Activation::relu) {
            const Tensor& out = cache.outputs[i];
            for (std::size_t p = 0; p < g.data.size(); ++p) {
                if (out.data[p] <= 0.0) g.data[p] = 0.0;
            }
        }

        std::vector<std::size_t> gin_shape = in_dims;
        gin_shape.insert(gin_shape.begin(), n);

        switch (l.kind) {
            case LayerKind::dense: {
                ParamEntry& ge = grads.entries[--param_idx];
                const ParamEntry& pe = params.entries[param_idx];
                const std::size_t in_dim = in_dims[0], out_dim = out_dims[0];
                // dW (out x in) = g^T (out x n) . x (n x in)
                scratch.resize(n * out_dim);
                transpose(g.ptr(), scratch.data(), n, out_dim);
                matmul(scratch.data(), src.ptr(), ge.weights.ptr(), out_dim, n, in_dim);
                for (std::size_t s = 0; s < n; ++s) {
                    const double* row = g.ptr() + s * out_dim;
                    for (std::size_t j = 0; j < out_dim; ++j) ge.bias.data[j] += row[j];
                }
                Tensor gin = Tensor::zeros(gin_shape);
                matmul(g.ptr(), pe.weights.ptr(), gin.ptr(), n, out_dim, in_dim);
                g = std::move(gin);
                break;
            }
            case LayerKind::conv2d: {
                ParamEntry& ge = grads.entries[--param_idx];
                const ParamEntry& pe = params.entries[param_idx];
                const std::size_t c_in = in_dims[0], h = in_dims[1], w = in_dims[2];
                const std::size_t oc = out_dims[0], oh = out_dims[1], ow = out_dims[2];
                const std::size_t k = c_in * l.kernel_h * l.kernel_w;
                const std::size_t plane = oh * ow;
                const Tensor& cols = cache.cols[i];
                scratch.resize(std::max(plane * k, k * oc));
                std::vector<double> w_t(k * oc);
                transpose(pe.weights.ptr(), w_t.data(), oc, k);
                std::vector<double> dcol(k * plane);
                Tensor gin = Tensor::zeros(gin_shape);
                for (std::size_t s = 0; s < n; ++s) {
                    const double* gs = g.ptr() + s * oc * plane;
                    const double* col = cols.ptr() + s * k * plane;
                    // dW += g_s . col^T
                    transpose(col, scratch.data(), k, plane);
                    matmul(gs, scratch.data(), ge.weights.ptr(), oc, plane, k, true);
                    for (std::size_t c = 0; c < oc; ++c) {
                        const double* row = gs + c * plane;
                        double acc = 0.0;
                        for (std::size_t p = 0; p < plane; ++p) acc += row[p];
                        ge.bias.data[c] += acc;
                    }
                    // dcol = W^T . g_s, scattered back to the input
                    matmul(w_t.data(), gs, dcol.data(), k, oc, plane);
                    col2im_add(dcol.data(), c_in, h, w, l, oh, ow,
                               gin.ptr() + s * c_in * h * w);
                }
                g = std::move(gin);
                break;
            }
            case LayerKind::avgpool2d: {
                const std::size_t c_in = in_dims[0], h = in_dims[1], w = in_dims[2];
                const std::size_t oh = out_dims[1], ow = out_dims[2];
                const double inv = 1.0 / static_cast<double>(l.kernel_h * l.kernel_w);
                Tensor gin = Tensor::zeros(gin_shape);
                for (std::size_t s = 0; s < n; ++s) {
                    for (std::size_t c = 0; c < c_in; ++c) {
                        const double* go = g.ptr() + (s * c_in + c) * oh * ow;
                        double* gi = gin.ptr() + (s * c_in + c) * h * w;
                        for (std::size_t y = 0; y < oh; ++y) {
                            for (std::size_t x = 0; x < ow; ++x) {
                                const double v = go[y * ow + x] * inv;
                                for (std::size_t kh = 0; kh < l.kernel_h; ++kh) {
                                    double* row = gi + (y * l.stride_h + kh) * w +
                                                  x * l.stride_w;
                                    for (std::size_t kw = 0; kw < l.kernel_w; ++kw) {
                                        row[kw] += v;
                                    }
                                }
                            }
                        }
                    }
                }
                g = std::move(gin);
                break;
            }
            case LayerKind::maxpool2d: {
                const std::size_t c_in = in_dims[0], h = in_dims[1], w = in_dims[2];
                const std::size_t oh = out_dims[1], ow = out_dims[2];
                const std::vector<std::uint32_t>& am = cache.argmax[i];
                Tensor gin = Tensor::zeros(gin_shape);
                for (std::size_t s = 0; s < n; ++s) {
                    for (std::size_t c = 0; c < c_in; ++c) {
                        const double* go = g.ptr() + (s * c_in + c) * oh * ow;
                        const std::uint32_t* a = am.data() + (s * c_in + c) * oh * ow;
                        double* gi = gin.ptr() + (s * c_in + c) * h * w;
                        for (std::size_t p = 0; p < oh * ow; ++p) gi[a[p]] += go[p];
                    }
                }
                g = std::move(gin);
                break;
            }
            case LayerKind::flatten: {
                g.shape = gin_shape;
                break;
            }
        }
    }

    return {loss, std::move(grads)};
}

void adam_step_inplace(ParamSet& params, const ParamSet& grads, AdamState& state) {
    if (!params.shape_compatible(grads) || !params.shape_compatible(state.m) ||
        !params.shape_compatible(state.v)) {
        fail(ErrorKind::shape, "adam update with incompatible parameter/gradient/state shapes");
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
        auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                          std::vector<double>& m, std::vector<double>& v) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
                v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
                const double mhat = m[i] / c1;
                const double vhat = v[i] / c2;
                p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
            }
        };
        update(params.entries[e].weights.data, grads.entries[e].weights.data,
               state.m.entries[e].weights.data, state.v.entries[e].weights.data);
        update(params.entries[e].bias.data, grads.entries[e].bias.data,
               state.m.entries[e].bias.data, state.v.entries[e].bias.data);
    }
}

std::pair<ParamSet, AdamState> adam_step(const ParamSet& params, const ParamSet& grads,
                                         const AdamState& state) {
    ParamSet p = params;
    AdamState st = state;
    adam_step_inplace(p, grads, st);
    return {std::move(p), std::move(st)};
}

Tensor gather_batch(const Tensor& images, const std::vector<std::int32_t>& indices,
                    std::size_t first, std::size_t count) {
    const std::size_t sample = images.numel() / images.shape[0];
    std::vector<std::size_t> shape = images.shape;
    shape[0] = count;
    Tensor out = Tensor::zeros(shape);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t src = static_cast<std::size_t>(indices[first + i]);
        std::memcpy(out.ptr() + i * sample, images.ptr() + src * sample,
                    sample * sizeof(double));
    }
    return out;
}

EvalMetrics evaluate_metrics(const ModelSpec& spec, const ParamSet& params,
                             const Tensor& images, const std::vector<int>& labels,
                             const std::vector<std::int32_t>& indices,
                             std::size_t batch_size) {
    std::vector<std::int32_t> all;
    const std::vector<std::int32_t>* idx = &indices;
    if (indices.empty()) {
        all.resize(images.shape[0]);
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::int32_t>(i);
        idx = &all;
    }
    const std::size_t total = idx->size();
    if (total == 0) fail(ErrorKind::data, "empty test set");
    const std::size_t classes = num_classes(spec);

    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t at = 0; at < total; at += batch_size) {
        const std::size_t cnt = std::min(batch_size, total - at);
        Tensor batch = gather_batch(images, *idx, at, cnt);
        ForwardResult fwd = forward(spec, params, batch);
        const double* z = fwd.cache.final_preact.numel() ? fwd.cache.final_preact.ptr()
                                                         : fwd.output.ptr();
        for (std::size_t i = 0; i < cnt; ++i) {
            const double* row = fwd.output.ptr() + i * classes;
            std::size_t best = 0;
            for (std::size_t j = 1; j < classes; ++j) {
                if (row[j] > row[best]) best = j;  // ties keep the lowest index
            }
            const int label = labels[static_cast<std::size_t>((*idx)[at + i])];
            if (label < 0 || static_cast<std::size_t>(label) >= classes) {
                fail(ErrorKind::data, "label " + std::to_string(label) + " outside [0, " +
                                          std::to_string(classes) + ")");
            }
            if (static_cast<int>(best) == label) ++correct;

            const double* zr = z + i * classes;
            double mx = zr[0];
            for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, zr[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < classes; ++j) sum += std::exp(zr[j] - mx);
            loss += mx + std::log(sum) - zr[static_cast<std::size_t>(label)];
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(total),
            loss / static_cast<double>(total), total};
}

double evaluate(const ModelSpec& spec, const ParamSet& params, const Tensor& images,
                const std::vector<int>& labels, const std::vector<std::int32_t>& indices) {
    return evaluate_metrics(spec, params, images, labels, indices).accuracy;
}

}  // namespace ModFL
