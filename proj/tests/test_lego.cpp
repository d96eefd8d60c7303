#include "doctest.h"
#include "loopformer/lego.hpp"

#include <cmath>
#include <random>

using namespace lf;

namespace {

void put(Matrix& x, const TapeLayout& l, const std::string& block, int col, const std::vector<double>& v) {
    for (size_t i = 0; i < v.size(); ++i) x(l.rows.row(block, static_cast<int>(i)), col) = v[i];
}

void put_code(Matrix& x, const TapeLayout& l, const std::string& block, int col, int target) {
    auto c = encode_position(target, l.n);
    put(x, l, block, col, std::vector<double>(c.bits.begin(), c.bits.end()));
}

std::vector<double> get(const Matrix& x, const TapeLayout& l, const std::string& block, int col) {
    std::vector<double> v;
    for (int i = 0; i < l.rows.height(block); ++i) v.push_back(x(l.rows.row(block, i), col));
    return v;
}

// Memory data in SRC, pointer in PTR on every scratch column.
Matrix data_tape(const TapeLayout& l, std::mt19937_64& rng, int target) {
    Matrix x = l.blank_tape();
    std::uniform_int_distribution<int> bit(0, 1);
    for (int j = l.scratch(); j < l.n; ++j)
        for (int i = 0; i < l.rows.height("SRC"); ++i) x(l.rows.row("SRC", i), j) = bit(rng) ? 1.0 : -1.0;
    for (int j = 0; j < l.scratch(); ++j) put_code(x, l, "PTR", j, target);
    return x;
}

double max_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("layout validation") {
    auto l = make_simple_layout(8, 1, 3);
    Matrix x = l.blank_tape();
    CHECK(x(l.rows.row("IND"), 0) == 1.0);
    CHECK(x(l.rows.row("IND"), 1) == 0.0);
    CHECK(get(x, l, "ENC", 0) == std::vector<double>{0, 0, 0});
    CHECK(get(x, l, "ENC", 5) == std::vector<double>{1, -1, 1});
    CHECK_THROWS_AS(make_simple_layout(4, 4, 1), Error);
    l.sections.back().width += 1;
    CHECK_THROWS_AS(l.validate(), Error);
}

TEST_CASE("read copies the pointed column, nothing else changes") {
    std::mt19937_64 rng(5);
    for (int s : {1, 3}) {
        auto l = make_simple_layout(12, s, 4);
        const double C = default_gate(1.0, 4);
        auto tie = build_read_layer(l, "PTR", "SRC", "DST", C);
        auto direct = build_read_layer(l, "PTR", "SRC", "DST", C, ReadForm::Direct);
        for (int target = s; target < l.n; ++target) {
            Matrix x = data_tape(l, rng, target);
            for (const auto* layer : {&tie, &direct}) {
                Matrix y = apply_layer(x, *layer, SoftmaxMode::hardmax());
                Matrix want = x;
                for (int j = 0; j < s; ++j) put(want, l, "DST", j, get(x, l, "SRC", target));
                CHECK(max_diff(y, want) == 0.0);
            }
        }
    }
}

TEST_CASE("write overwrites the pointed column only; read/write round trip") {
    std::mt19937_64 rng(6);
    auto l = make_simple_layout(10, 1, 3);
    const double C = default_gate(1.0, 3);
    auto write = build_write_layer(l, "PTR", "DST", "SRC", C);
    auto read = build_read_layer(l, "PTR", "SRC", "DST", C);
    for (int target = 1; target < l.n; ++target) {
        Matrix x = data_tape(l, rng, target);
        std::vector<double> v{1, -1, 1};
        put(x, l, "DST", 0, v);
        Matrix y = apply_layer(x, write, SoftmaxMode::hardmax());
        Matrix want = x;
        put(want, l, "SRC", target, v);
        CHECK(max_diff(y, want) == 0.0);
        // writing the value already present changes nothing
        CHECK(max_diff(apply_layer(y, write, SoftmaxMode::hardmax()), y) == 0.0);
        // read then write back the same column
        Matrix z = data_tape(l, rng, target);
        Matrix r = apply_layer(z, read, SoftmaxMode::hardmax());
        Matrix back = apply_layer(r, write, SoftmaxMode::hardmax());
        CHECK(max_diff(back, r) == 0.0);
    }
}

TEST_CASE("softmax read stays within the temperature bound") {
    std::mt19937_64 rng(7);
    auto l = make_simple_layout(16, 1, 3);
    const double C = default_gate(1.0, 3);
    auto layer = build_read_layer(l, "PTR", "SRC", "DST", C);
    const int d = l.rows.width(), n = l.n;
    double prev = 1e300;
    for (double eps : {1e-2, 1e-4, 1e-6}) {
        double lam = std::log(1.0 * d * std::pow(n, 3) / eps);
        double worst = 0;
        for (int target = 1; target < n; ++target) {
            Matrix x = data_tape(l, rng, target);
            worst = std::max(worst, max_diff(apply_layer(x, layer, SoftmaxMode::softmax(lam)),
                                             apply_layer(x, layer, SoftmaxMode::hardmax())));
        }
        CHECK(worst <= eps);
        CHECK(worst <= prev);
        prev = worst;
    }
}

TEST_CASE("branch mux, exhaustive on n = 16") {
    auto l = make_simple_layout(16, 1, 1);
    auto layers = build_branch_layers(l, "FLAG", "PTR", "TGT");
    REQUIRE(layers.size() == 2);
    for (auto& ly : layers)
        for (auto& h : ly.heads) CHECK(h.value.cwiseAbs().maxCoeff() == 0.0);
    TransformerStack st(l.rows.width(), layers);
    for (int flag = 0; flag <= 1; ++flag)
        for (int counter = 0; counter + 1 < 16; ++counter)
            for (int target = 0; target < 16; ++target) {
                Matrix x = l.blank_tape();
                put_code(x, l, "PTR", 0, counter);
                put_code(x, l, "TGT", 0, target);
                x(l.rows.row("FLAG"), 0) = flag;
                Matrix y = st.forward(x, SoftmaxMode::hardmax());
                Matrix want = x;
                put_code(want, l, "PTR", 0, flag ? target : counter + 1);
                CHECK(max_diff(y, want) == 0.0);
            }
}

TEST_CASE("error correction snaps and is idempotent") {
    auto l = make_simple_layout(8, 1, 4);
    auto ec = build_error_correction_layer(l, 0.25, {"SRC"});
    auto tight = build_error_correction_layer(l, 0.01, {"SRC"});
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> lat(-1, 1);
    std::uniform_real_distribution<double> noise(-0.2499, 0.2499);
    for (int it = 0; it < 20; ++it) {
        Matrix clean = l.blank_tape();
        for (int j = 0; j < l.n; ++j)
            for (int i = 0; i < 4; ++i) clean(l.rows.row("SRC", i), j) = lat(rng);
        Matrix noisy = clean;
        for (int j = 0; j < l.n; ++j)
            for (int i = 0; i < 4; ++i) noisy(l.rows.row("SRC", i), j) += noise(rng);
        Matrix y = apply_layer(noisy, ec, SoftmaxMode::hardmax());
        CHECK(max_diff(y, clean) < 1e-12);
        CHECK(max_diff(apply_layer(y, ec, SoftmaxMode::hardmax()), y) < 1e-12);
    }
    Matrix x = l.blank_tape();
    x(l.rows.row("SRC"), 1) = 0.9999;
    x(l.rows.row("SRC", 1), 1) = -1.0003;
    Matrix y = apply_layer(x, tight, SoftmaxMode::hardmax());
    CHECK(y(l.rows.row("SRC"), 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y(l.rows.row("SRC", 1), 1) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(build_error_correction_layer(l, 0.5, {"SRC"}), Error);
}
