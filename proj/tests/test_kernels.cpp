#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "evoagent/kernels/kernels.hpp"
#include "test_util.hpp"

using namespace evoagent;
namespace k = evoagent::kern;

namespace {

struct BackendGuard {
    k::Backend saved;
    BackendGuard() : saved(k::active_backend()) {}
    ~BackendGuard() { k::set_backend(saved); }
};

bool have_avx2() { return k::backend_supported(k::Backend::avx2); }

}  // namespace

TEST_CASE("matmul_nt matches a hand-rolled reference") {
    const size_t n = 3, rows = 5, cols = 7;
    const auto X = test::random_vec(n * cols, 1);
    const auto W = test::random_vec(rows * cols, 2);
    const auto b = test::random_vec(rows, 3);
    std::vector<double> Y(n * rows);
    k::matmul_nt(X.data(), W.data(), b.data(), Y.data(), n, rows, cols);
    for (size_t i = 0; i < n; ++i) {
        for (size_t r = 0; r < rows; ++r) {
            double acc = b[r];
            for (size_t c = 0; c < cols; ++c) acc += X[i * cols + c] * W[r * cols + c];
            CHECK(Y[i * rows + r] == doctest::Approx(acc).epsilon(1e-13));
        }
    }
}

TEST_CASE("backward kernels match dense reference") {
    const size_t n = 4, rows = 6, cols = 9;
    const auto dY = test::random_vec(n * rows, 10);
    const auto W = test::random_vec(rows * cols, 11);
    const auto X = test::random_vec(n * cols, 12);

    std::vector<double> dX(n * cols, 0.5), dX_ref(n * cols, 0.5);
    k::matmul_nn_accum(dY.data(), W.data(), dX.data(), n, rows, cols);
    for (size_t i = 0; i < n; ++i) {
        for (size_t c = 0; c < cols; ++c) {
            for (size_t r = 0; r < rows; ++r) dX_ref[i * cols + c] += dY[i * rows + r] * W[r * cols + c];
        }
    }
    CHECK(test::max_rel_err(dX, dX_ref) < 1e-12);

    std::vector<double> dW(rows * cols, -0.25), dW_ref(rows * cols, -0.25);
    k::accum_outer(dY.data(), X.data(), dW.data(), n, rows, cols);
    for (size_t i = 0; i < n; ++i) {
        for (size_t r = 0; r < rows; ++r) {
            for (size_t c = 0; c < cols; ++c) dW_ref[r * cols + c] += dY[i * rows + r] * X[i * cols + c];
        }
    }
    CHECK(test::max_rel_err(dW, dW_ref) < 1e-12);

    std::vector<double> db(rows, 0.0), db_ref(rows, 0.0);
    k::accum_colsum(dY.data(), db.data(), n, rows);
    for (size_t i = 0; i < n; ++i) {
        for (size_t r = 0; r < rows; ++r) db_ref[r] += dY[i * rows + r];
    }
    CHECK(test::max_rel_err(db, db_ref) < 1e-13);
}

TEST_CASE("scalar and avx2 backends agree on every kernel") {
    if (!have_avx2()) {
        MESSAGE("AVX2 unavailable; equivalence suite skipped on this host");
        return;
    }
    BackendGuard guard;
    // Odd sizes on purpose so vector tails are exercised.
    const size_t n = 5, rows = 13, cols = 31;
    const auto X = test::random_vec(n * cols, 21);
    const auto W = test::random_vec(rows * cols, 22);
    const auto b = test::random_vec(rows, 23);
    const auto dY = test::random_vec(n * rows, 24);

    k::set_backend(k::Backend::scalar);
    std::vector<double> Y_s(n * rows), dX_s(n * cols, 0.0), dW_s(rows * cols, 0.0), db_s(rows, 0.0);
    k::matmul_nt(X.data(), W.data(), b.data(), Y_s.data(), n, rows, cols);
    k::matmul_nn_accum(dY.data(), W.data(), dX_s.data(), n, rows, cols);
    k::accum_outer(dY.data(), X.data(), dW_s.data(), n, rows, cols);
    k::accum_colsum(dY.data(), db_s.data(), n, rows);
    const double dot_s = k::dot(X.data(), X.data(), n * cols);
    const double ss_s = k::sum_sq(W.data(), rows * cols);

    k::set_backend(k::Backend::avx2);
    std::vector<double> Y_v(n * rows), dX_v(n * cols, 0.0), dW_v(rows * cols, 0.0), db_v(rows, 0.0);
    k::matmul_nt(X.data(), W.data(), b.data(), Y_v.data(), n, rows, cols);
    k::matmul_nn_accum(dY.data(), W.data(), dX_v.data(), n, rows, cols);
    k::accum_outer(dY.data(), X.data(), dW_v.data(), n, rows, cols);
    k::accum_colsum(dY.data(), db_v.data(), n, rows);
    const double dot_v = k::dot(X.data(), X.data(), n * cols);
    const double ss_v = k::sum_sq(W.data(), rows * cols);

    CHECK(test::max_rel_err(Y_s, Y_v) < 1e-13);
    CHECK(test::max_rel_err(dX_s, dX_v) < 1e-13);
    CHECK(test::max_rel_err(dW_s, dW_v) < 1e-13);
    CHECK(test::max_rel_err(db_s, db_v) < 1e-13);
    CHECK(dot_s == doctest::Approx(dot_v).epsilon(1e-13));
    CHECK(ss_s == doctest::Approx(ss_v).epsilon(1e-13));

    std::vector<double> ya = test::random_vec(77, 25), yb = ya;
    k::set_backend(k::Backend::scalar);
    k::axpy(0.37, X.data(), ya.data(), 77);
    k::scale(ya.data(), -1.21, 77);
    k::set_backend(k::Backend::avx2);
    k::axpy(0.37, X.data(), yb.data(), 77);
    k::scale(yb.data(), -1.21, 77);
    CHECK(test::max_rel_err(ya, yb) < 1e-13);
}

TEST_CASE("logistic and softplus behave at the reference points") {
    CHECK(k::logistic(0.0) == doctest::Approx(0.5));
    CHECK(k::logistic(40.0) == 1.0);   // saturates exactly in double precision
    CHECK(k::logistic(-40.0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(k::softplus(0.0) == doctest::Approx(std::log(2.0)));
    CHECK(k::softplus(50.0) == doctest::Approx(50.0));
    CHECK(k::softplus(-50.0) == doctest::Approx(std::exp(-50.0)));
}
