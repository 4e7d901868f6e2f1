#include "evoagent/kernels/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#include "evoagent/core/errors.hpp"

namespace evoagent::kern {

namespace detail {

// ---- scalar reference implementations ----

void matmul_nt_scalar(const double* X, const double* W, const double* b, double* Y,
                      size_t n, size_t rows, size_t cols) {
    for (size_t i = 0; i < n; ++i) {
        const double* x = X + i * cols;
        double* y = Y + i * rows;
        for (size_t r = 0; r < rows; ++r) {
            const double* w = W + r * cols;
            double acc = 0.0;
            for (size_t c = 0; c < cols; ++c) acc += w[c] * x[c];
            y[r] = b ? acc + b[r] : acc;
        }
    }
}

void matmul_nn_accum_scalar(const double* dY, const double* W, double* dX,
                            size_t n, size_t rows, size_t cols) {
    for (size_t i = 0; i < n; ++i) {
        const double* gy = dY + i * rows;
        double* gx = dX + i * cols;
        for (size_t r = 0; r < rows; ++r) {
            const double g = gy[r];
            if (g == 0.0) continue;
            const double* w = W + r * cols;
            for (size_t c = 0; c < cols; ++c) gx[c] += g * w[c];
        }
    }
}

void accum_outer_scalar(const double* dY, const double* X, double* dW,
                        size_t n, size_t rows, size_t cols) {
    for (size_t i = 0; i < n; ++i) {
        const double* gy = dY + i * rows;
        const double* x = X + i * cols;
        for (size_t r = 0; r < rows; ++r) {
            const double g = gy[r];
            if (g == 0.0) continue;
            double* w = dW + r * cols;
            for (size_t c = 0; c < cols; ++c) w[c] += g * x[c];
        }
    }
}

void accum_colsum_scalar(const double* dY, double* db, size_t n, size_t rows) {
    for (size_t i = 0; i < n; ++i) {
        const double* gy = dY + i * rows;
        for (size_t r = 0; r < rows; ++r) db[r] += gy[r];
    }
}

double dot_scalar(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_scalar(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(double* x, double a, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] *= a;
}

double sum_sq_scalar(const double* x, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

// ---- AVX2 variants (defined in kernels_avx2.cpp, compiled with -mavx2) ----
#if defined(EVOAGENT_HAVE_AVX2_TU)
void matmul_nt_avx2(const double*, const double*, const double*, double*, size_t, size_t, size_t);
void matmul_nn_accum_avx2(const double*, const double*, double*, size_t, size_t, size_t);
void accum_outer_avx2(const double*, const double*, double*, size_t, size_t, size_t);
void accum_colsum_avx2(const double*, double*, size_t, size_t);
double dot_avx2(const double*, const double*, size_t);
void axpy_avx2(double, const double*, double*, size_t);
void scale_avx2(double*, double, size_t);
double sum_sq_avx2(const double*, size_t);
#endif

struct Dispatch {
    decltype(&matmul_nt_scalar) matmul_nt;
    decltype(&matmul_nn_accum_scalar) matmul_nn_accum;
    decltype(&accum_outer_scalar) accum_outer;
    decltype(&accum_colsum_scalar) accum_colsum;
    decltype(&dot_scalar) dot;
    decltype(&axpy_scalar) axpy;
    decltype(&scale_scalar) scale;
    decltype(&sum_sq_scalar) sum_sq;
};

constexpr Dispatch kScalar{matmul_nt_scalar, matmul_nn_accum_scalar, accum_outer_scalar,
                           accum_colsum_scalar, dot_scalar, axpy_scalar, scale_scalar,
                           sum_sq_scalar};

#if defined(EVOAGENT_HAVE_AVX2_TU)
constexpr Dispatch kAvx2{matmul_nt_avx2, matmul_nn_accum_avx2, accum_outer_avx2,
                         accum_colsum_avx2, dot_avx2, axpy_avx2, scale_avx2, sum_sq_avx2};
#endif

bool cpu_has_avx2() {
#if defined(EVOAGENT_HAVE_AVX2_TU) && (defined(__x86_64__) || defined(__i386__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend pick_default_backend() {
    if (const char* env = std::getenv("EVOAGENT_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2()) throw ConfigError("EVOAGENT_KERNELS=avx2 but CPU/build lacks AVX2");
            return Backend::avx2;
        }
        throw ConfigError(std::string("unknown EVOAGENT_KERNELS value: ") + env);
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend& backend_slot() {
    static Backend b = pick_default_backend();
    return b;
}

const Dispatch& table() {
#if defined(EVOAGENT_HAVE_AVX2_TU)
    return backend_slot() == Backend::avx2 ? kAvx2 : kScalar;
#else
    return kScalar;
#endif
}

}  // namespace detail

Backend active_backend() { return detail::backend_slot(); }

bool backend_supported(Backend b) {
    return b == Backend::scalar || (b == Backend::avx2 && detail::cpu_has_avx2());
}

void set_backend(Backend b) {
    if (!backend_supported(b)) throw ConfigError("requested kernel backend unsupported on this host");
    detail::backend_slot() = b;
}

std::string_view backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

void matmul_nt(const double* X, const double* W, const double* b, double* Y,
               size_t n, size_t rows, size_t cols) {
    detail::table().matmul_nt(X, W, b, Y, n, rows, cols);
}

void matmul_nn_accum(const double* dY, const double* W, double* dX,
                     size_t n, size_t rows, size_t cols) {
    detail::table().matmul_nn_accum(dY, W, dX, n, rows, cols);
}

void accum_outer(const double* dY, const double* X, double* dW,
                 size_t n, size_t rows, size_t cols) {
    detail::table().accum_outer(dY, X, dW, n, rows, cols);
}

void accum_colsum(const double* dY, double* db, size_t n, size_t rows) {
    detail::table().accum_colsum(dY, db, n, rows);
}

double dot(const double* a, const double* b, size_t n) { return detail::table().dot(a, b, n); }
void axpy(double a, const double* x, double* y, size_t n) { detail::table().axpy(a, x, y, n); }
void scale(double* x, double a, size_t n) { detail::table().scale(x, a, n); }
double sum_sq(const double* x, size_t n) { return detail::table().sum_sq(x, n); }

void tanh_vec(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void logistic_vec(const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] = logistic(x[i]);
}

}  // namespace evoagent::kern
