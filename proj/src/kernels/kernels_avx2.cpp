// AVX2/FMA variants of the dense kernels. Compiled with -mavx2 -mfma in its
// own translation unit; only reached through the runtime dispatch table after
// a cpuid check. Results may differ from the scalar reference in the last few
// ulps (different summation order), which the equivalence tests bound.
#if defined(__AVX2__)

#include <immintrin.h>

#include <cstddef>

namespace evoagent::kern::detail {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

inline double dot_impl(const double* a, const double* b, size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline void axpy_impl(double a, const double* x, double* y, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

void matmul_nt_avx2(const double* X, const double* W, const double* b, double* Y,
                    size_t n, size_t rows, size_t cols) {
    for (size_t i = 0; i < n; ++i) {
        const double* x = X + i * cols;
        double* y = Y + i * rows;
        for (size_t r = 0; r < rows; ++r) {
            const double acc = dot_impl(W + r * cols, x, cols);
            y[r] = b ? acc + b[r] : acc;
        }
    }
}

void matmul_nn_accum_avx2(const double* dY, const double* W, double* dX,
                          size_t n, size_t rows, size_t cols) {
    for (size_t i = 0; i < n; ++i) {
        const double* gy = dY + i * rows;
        double* gx = dX + i * cols;
        for (size_t r = 0; r < rows; ++r) {
            if (gy[r] == 0.0) continue;
            axpy_impl(gy[r], W + r * cols, gx, cols);
        }
    }
}

void accum_outer_avx2(const double* dY, const double* X, double* dW,
                      size_t n, size_t rows, size_t cols) {
    for (size_t i = 0; i < n; ++i) {
        const double* gy = dY + i * rows;
        const double* x = X + i * cols;
        for (size_t r = 0; r < rows; ++r) {
            if (gy[r] == 0.0) continue;
            axpy_impl(gy[r], x, dW + r * cols, cols);
        }
    }
}

void accum_colsum_avx2(const double* dY, double* db, size_t n, size_t rows) {
    for (size_t i = 0; i < n; ++i) {
        const double* gy = dY + i * rows;
        size_t r = 0;
        for (; r + 4 <= rows; r += 4) {
            __m256d acc = _mm256_add_pd(_mm256_loadu_pd(db + r), _mm256_loadu_pd(gy + r));
            _mm256_storeu_pd(db + r, acc);
        }
        for (; r < rows; ++r) db[r] += gy[r];
    }
}

double dot_avx2(const double* a, const double* b, size_t n) { return dot_impl(a, b, n); }

void axpy_avx2(double a, const double* x, double* y, size_t n) { axpy_impl(a, x, y, n); }

void scale_avx2(double* x, double a, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
    }
    for (; i < n; ++i) x[i] *= a;
}

double sum_sq_avx2(const double* x, size_t n) { return dot_impl(x, x, n); }

}  // namespace evoagent::kern::detail

#endif  // __AVX2__
