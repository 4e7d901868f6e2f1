#pragma once

#include <cmath>
#include <cstddef>
#include <string_view>

namespace evoagent::kern {

// Dense double-precision kernels behind the world model and the imagination
// loop. Scalar reference implementations are the semantic ground truth; the
// AVX2 variants are selected at runtime when the CPU supports them and are
// equivalence-tested against the reference. Backend choice is process-wide
// and fixed after first use unless overridden (EVOAGENT_KERNELS=scalar|avx2
// or set_backend), so a given host always reproduces the same bits.
enum class Backend { scalar, avx2 };

Backend active_backend();
bool backend_supported(Backend b);
void set_backend(Backend b);  // throws ConfigError if unsupported
std::string_view backend_name(Backend b);

// Y[n x rows] = X[n x cols] * W[rows x cols]^T (+ bias per row when b != nullptr).
void matmul_nt(const double* X, const double* W, const double* b, double* Y,
               size_t n, size_t rows, size_t cols);

// dX[n x cols] += dY[n x rows] * W[rows x cols].
void matmul_nn_accum(const double* dY, const double* W, double* dX,
                     size_t n, size_t rows, size_t cols);

// dW[rows x cols] += dY[n x rows]^T * X[n x cols].
void accum_outer(const double* dY, const double* X, double* dW,
                 size_t n, size_t rows, size_t cols);

// db[rows] += column sums of dY[n x rows].
void accum_colsum(const double* dY, double* db, size_t n, size_t rows);

double dot(const double* a, const double* b, size_t n);
void axpy(double a, const double* x, double* y, size_t n);  // y += a*x
void scale(double* x, double a, size_t n);
double sum_sq(const double* x, size_t n);

// Elementwise transcendentals. Scalar on every backend: libm accuracy is the
// contract here, vector width buys nothing measurable at these dimensions.
void tanh_vec(const double* x, double* y, size_t n);
void logistic_vec(const double* x, double* y, size_t n);

inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) {
    // log(1 + e^x), stable for large |x|.
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace evoagent::kern
