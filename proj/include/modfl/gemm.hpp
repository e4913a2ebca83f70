#pragma once

#include <cstddef>

namespace ModFL {

// C (m x n) = A (m x k) * B (k x n), row-major. accumulate adds into C.
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// dst (cols x rows) = src^T for src (rows x cols), row-major.
void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols);

}  // namespace ModFL
