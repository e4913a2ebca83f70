#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace ModFL {

// Dense n-dimensional array of doubles, row-major.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {}

    static Tensor zeros(std::vector<std::size_t> shape);

    std::size_t numel() const { return data.size(); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    bool all_finite() const;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace ModFL
