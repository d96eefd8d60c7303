#include "doctest.h"
#include "loopformer/tensor.hpp"

#include <cmath>
#include <random>

using namespace lf;

namespace {

Matrix random_matrix(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = u(rng);
    return m;
}

// Straight-line evaluation of one layer, scalar by scalar.
Matrix naive_layer(const Matrix& x, const TransformerLayer& layer, double lambda) {
    const int d = static_cast<int>(x.rows()), n = static_cast<int>(x.cols());
    Matrix att = x;
    for (const auto& h : layer.heads) {
        const int k = static_cast<int>(h.key.rows());
        std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int a = 0; a < k; ++a) {
                    double ki = 0, qj = 0;
                    for (int r = 0; r < d; ++r) {
                        ki += h.key(a, r) * x(r, i);
                        qj += h.query(a, r) * x(r, j);
                    }
                    s[i][j] += ki * qj;
                }
        for (int j = 0; j < n; ++j) {
            double z = 0;
            for (int i = 0; i < n; ++i) z += std::exp(lambda * s[i][j]);
            for (int i = 0; i < n; ++i) {
                double w = std::exp(lambda * s[i][j]) / z;
                for (int r = 0; r < d; ++r) {
                    double v = 0;
                    for (int q = 0; q < d; ++q) v += h.value(r, q) * x(q, i);
                    att(r, j) += v * w;
                }
            }
        }
    }
    Matrix out = att;
    const auto& f = layer.ffn;
    for (int j = 0; j < n; ++j) {
        for (int u = 0; u < f.hidden(); ++u) {
            double a = f.b1(u);
            for (int r = 0; r < d; ++r) a += f.w1(u, r) * att(r, j);
            a = std::max(a, 0.0);
            for (int r = 0; r < d; ++r) out(r, j) += f.w2(r, u) * a;
        }
        for (int r = 0; r < d; ++r) out(r, j) += f.b2(r);
    }
    return out;
}

}  // namespace

TEST_CASE("softmax columns") {
    Matrix m(2, 1);
    m << 0, 0;
    auto s = softmax_columns(m, SoftmaxMode::softmax(1.0));
    CHECK(s(0, 0) == doctest::Approx(0.5));
    m << 1, 2;
    s = softmax_columns(m, SoftmaxMode::softmax(1.0));
    CHECK(s(0, 0) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-14));
    CHECK(s(1, 0) == doctest::Approx(std::exp(1.0) / (1.0 + std::exp(1.0))).epsilon(1e-14));
    Matrix h(3, 1);
    h << 1, 0, 0;
    auto hm = softmax_columns(h, SoftmaxMode::hardmax());
    CHECK(hm(0, 0) == 1.0);
    CHECK(hm(1, 0) == 0.0);
    Matrix t(3, 1);
    t << 2, 2, 1;
    hm = softmax_columns(t, SoftmaxMode::hardmax());
    CHECK(hm(0, 0) == 0.5);
    CHECK(hm(1, 0) == 0.5);
    Matrix bad(1, 1);
    bad << NAN;
    CHECK_THROWS_AS(softmax_columns(bad, SoftmaxMode::hardmax()), Error);
    CHECK_THROWS_AS(SoftmaxMode::softmax(0.0), Error);
}

TEST_CASE("softmax normalization property") {
    std::mt19937_64 rng(1);
    for (int it = 0; it < 50; ++it) {
        Matrix m = random_matrix(rng, 7, 5, 30.0);
        for (auto mode : {SoftmaxMode::softmax(0.3), SoftmaxMode::softmax(40.0), SoftmaxMode::hardmax()}) {
            Matrix s = softmax_columns(m, mode);
            for (int j = 0; j < s.cols(); ++j) CHECK(std::abs(s.col(j).sum() - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("zero values make attention an exact identity") {
    std::mt19937_64 rng(2);
    Matrix x = random_matrix(rng, 4, 6);
    AttentionHead h{random_matrix(rng, 4, 4), random_matrix(rng, 4, 4), Matrix::Zero(4, 4), std::nullopt};
    Matrix y = apply_attention(x, {h}, SoftmaxMode::softmax(2.0));
    CHECK((y - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reset idiom zeroes a row") {
    FeedForward f;
    f.w1 = Matrix::Zero(2, 2);
    f.w1(0, 1) = 1;
    f.w1(1, 1) = -1;
    f.b1 = Vector::Zero(2);
    f.w2 = Matrix::Zero(2, 2);
    f.w2(1, 0) = -1;
    f.w2(1, 1) = 1;
    f.b2 = Vector::Zero(2);
    Matrix x(2, 3);
    x << 1, 2, 3, -4, 0.5, 7;
    Matrix y = apply_ffn(x, f);
    CHECK(y.row(0) == x.row(0));
    CHECK(y.row(1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("layer matches a straight-line evaluation") {
    std::mt19937_64 rng(3);
    for (int it = 0; it < 10; ++it) {
        TransformerLayer l;
        for (int k = 0; k < 2; ++k)
            l.heads.push_back({random_matrix(rng, 3, 5), random_matrix(rng, 3, 5), random_matrix(rng, 5, 5), std::nullopt});
        l.ffn.w1 = random_matrix(rng, 6, 5);
        l.ffn.b1 = random_matrix(rng, 6, 1);
        l.ffn.w2 = random_matrix(rng, 5, 6);
        l.ffn.b2 = random_matrix(rng, 5, 1);
        Matrix x = random_matrix(rng, 5, 7);
        Matrix want = naive_layer(x, l, 1.3);
        Matrix dense = apply_layer(x, l, SoftmaxMode::softmax(1.3));
        CHECK((dense - want).cwiseAbs().maxCoeff() < 1e-12);
        TransformerStack st(5, {l});
        Matrix fast = st.forward(x, SoftmaxMode::softmax(1.3));
        CHECK((fast - want).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("2x2 single head by hand") {
    Matrix x(2, 2);
    x << 1, 0, 0, 1;
    AttentionHead h{Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2), std::nullopt};
    Matrix y = apply_attention(x, {h}, SoftmaxMode::softmax(1.0));
    double w = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(y(0, 0) == doctest::Approx(1 + w));
    CHECK(y(1, 0) == doctest::Approx(1 - w));
}

TEST_CASE("width mismatches are rejected") {
    Matrix x = Matrix::Zero(3, 2);
    AttentionHead h{Matrix::Zero(1, 2), Matrix::Zero(1, 2), Matrix::Zero(2, 2), std::nullopt};
    CHECK_THROWS_AS(apply_attention(x, {h}, SoftmaxMode::hardmax()), Error);
    TransformerLayer l;
    l.ffn = FeedForward::identity(4);
    CHECK_THROWS_AS(TransformerStack(3, {l}), Error);
}

TEST_CASE("loop execution") {
    TransformerLayer l;
    l.ffn = FeedForward::identity(2);
    l.ffn.b2(0) = 1.0;
    TransformerStack st(2, {l});
    Matrix x = Matrix::Zero(2, 3);
    CHECK(loop_execute(st, x, 0, SoftmaxMode::hardmax()) == x);
    int seen = 0;
    Matrix y = loop_execute(st, x, 4, SoftmaxMode::hardmax(), [&](int c, const Matrix& m) {
        ++seen;
        CHECK(m(0, 0) == c);
    });
    CHECK(seen == 4);
    CHECK(y(0, 2) == 4.0);
    LoopOptions guard;
    guard.magnitude_guard = 2.5;
    CHECK_THROWS_AS(loop_execute(st, x, 4, SoftmaxMode::hardmax(), nullptr, guard), Error);
}
