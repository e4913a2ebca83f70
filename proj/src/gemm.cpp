#include "modfl/gemm.hpp"

#include <cstring>

namespace ModFL {

// i-k-j order with a column tile keeps the B panel hot and lets the inner
// loop vectorize over j without reassociating any reduction.
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (!accumulate) {
        std::memset(c, 0, m * n * sizeof(double));
    }
    constexpr std::size_t tile = 256;
    for (std::size_t j0 = 0; j0 < n; j0 += tile) {
        const std::size_t j1 = j0 + tile < n ? j0 + tile : n;
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double av = arow[p];
                const double* brow = b + p * n;
                for (std::size_t j = j0; j < j1; ++j) {
                    crow[j] += av * brow[j];
                }
            }
        }
    }
}

void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

}  // namespace ModFL
