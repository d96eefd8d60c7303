#include "doctest.h"
#include "loopformer/programs.hpp"

#include <cmath>
#include <random>

using namespace lf;

namespace {

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Every cycle within t eps / T of the reference, control identical, reaches EOF.
FleqRunReport check_schedule(const ProgramTemplate& t) {
    auto rep = run_fleq(t.program, t.registry, t.cycles, SoftmaxMode::hardmax());
    CHECK(rep.control_match);
    CHECK(rep.trace.halted);
    for (size_t i = 0; i < rep.deviation.size(); ++i)
        CHECK_MESSAGE(rep.deviation[i] <= (i + 1) * t.eps_total / t.cycles, t.name << " cycle " << i + 1);
    return rep;
}

Matrix out(const ProgramTemplate& t, const FleqRunReport& r, const std::string& v) {
    return t.program.value(v, r.trace.states.back().data);
}

}  // namespace

TEST_CASE("calculator worked cases") {
    for (auto [a, b, c, d] : {std::array{5.0, 4.0, 8.0, 1.0}, std::array{1.0, 1.0, 1.0, 1.0}}) {
        auto t = program_calculator(a, b, c, d);
        CHECK(t.cycles == 6);
        auto r = check_schedule(t);
        CHECK(std::abs(out(t, r, "out")(0, 0) - 0.01) <= calculator_budget({}));
        CHECK(calculator_exact(a, b, c, d) == doctest::Approx(0.01));
    }
    CHECK_THROWS_AS(program_calculator(1, 1, 5, 1), Error);  // negative intermediate
}

TEST_CASE("Newton inversion") {
    Matrix A = Matrix::Zero(2, 2);
    A(0, 0) = 1;
    A(1, 1) = 2;
    auto t = program_matrix_inverse(A, 8, 0.1);
    CHECK(t.cycles == 5 * 8);
    auto r = check_schedule(t);
    Matrix X = out(t, r, "X");
    CHECK(max_abs(X - A.inverse()) <= 1e-3);
    CHECK(max_abs(X - t.oracle["X"]) <= 1e-3);

    auto id = program_matrix_inverse(Matrix::Identity(3, 3), 1, 1.0);
    auto ri = check_schedule(id);
    CHECK(max_abs(out(id, ri, "X") - Matrix::Identity(3, 3)) <= 1e-6);
}

TEST_CASE("power iteration on diagonal and identity matrices") {
    Matrix A = Matrix::Zero(2, 2);
    A(0, 0) = 3;
    A(1, 1) = 1;
    auto t = program_power_iteration(A, 20, 6);
    auto r = check_schedule(t);
    Vector b = out(t, r, "b").col(0);
    CHECK(std::abs(std::abs(b(0)) - 1.0) <= 1e-3);
    CHECK(std::abs(b(1)) <= 1e-3);

    // every vector is an eigenvector of I, so b keeps its direction
    auto i2 = program_power_iteration(Matrix::Identity(2, 2), 3, 6);
    auto ri = check_schedule(i2);
    CHECK(max_abs(out(i2, ri, "b") - Matrix::Constant(2, 1, 1.0 / std::sqrt(2.0))) <= 1e-3);
    CHECK_THROWS_AS(program_power_iteration(Matrix::Identity(2, 2), 0, 6), Error);
}

TEST_CASE("Newton inverse sqrt converges quadratically") {
    Matrix A = Matrix::Zero(3, 3);
    A.diagonal() << 2.0, 1.0, 0.5;
    auto o = power_iteration_oracle(A, 1, 8, Vector::Constant(3, 1.0 / std::sqrt(3.0)), 1.0 / A.norm());
    for (size_t k = 0; k + 1 < o.newton_error.size(); ++k) {
        const double e = o.newton_error[k];
        if (e < 0.5 && e > 1e-12) CHECK(o.newton_error[k + 1] <= 2.0 * e * e);
    }
}

TEST_CASE("linear SGD") {
    Matrix X = Matrix::Constant(1, 1, 1.0);
    Vector y = Vector::Constant(1, 1.0);
    auto one = program_sgd_linear(X, y, 0.5, 1);
    auto r1 = check_schedule(one);
    CHECK(out(one, r1, "w")(0, 0) == doctest::Approx(0.5).epsilon(1e-6));

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    Matrix X3(3, 2);
    Vector y3(3);
    for (int i = 0; i < 6; ++i) X3.data()[i] = u(rng);
    for (int i = 0; i < 3; ++i) y3(i) = u(rng);
    auto t = program_sgd_linear(X3, y3, 0.3, 2);
    auto r = check_schedule(t);
    CHECK(max_abs(out(t, r, "w") - sgd_linear_oracle(X3, y3, 0.3, 2, Vector::Zero(2))) <= 1e-3);

    auto frozen = program_sgd_linear(X3, y3, 0.0, 2, Vector::Constant(2, 0.25));
    auto rf = check_schedule(frozen);
    CHECK(max_abs(out(frozen, rf, "w") - Matrix::Constant(2, 1, 0.25)) <= 1e-6);
}

TEST_CASE("pointers return to their initial codes after every epoch") {
    Matrix X(2, 2);
    X << 1, 0, 0, 1;
    Vector y(2);
    y << 1, -1;
    auto t = program_sgd_linear(X, y, 0.1, 3);
    auto ref = run_fleq_reference(t.program, t.registry, t.cycles);
    // the epoch counter sits before HALT and the three pristine copies
    const int te_line = t.program.eof() - 5;
    int epochs = 0;
    for (size_t k = 1; k < ref.states.size(); ++k) {
        if (ref.states[k - 1].pc != te_line) continue;
        ++epochs;
        for (const char* l : {"Lx", "Ly", "Lt"}) {
            int i = t.program.labels.at(l);
            CHECK(ref.states[k].code[i] == t.program.code[i]);
        }
    }
    CHECK(epochs == 3);
}

TEST_CASE("backprop oracle against finite differences") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    TwoLayerNet n;
    n.W1 = Matrix(2, 2);
    n.b1 = Vector(2);
    n.W2 = Matrix(1, 2);
    for (int i = 0; i < 4; ++i) n.W1.data()[i] = u(rng);
    for (int i = 0; i < 2; ++i) n.b1(i) = u(rng);
    for (int i = 0; i < 2; ++i) n.W2(0, i) = u(rng);
    n.b2 = u(rng);
    Vector x(2);
    x << 0.7, -0.4;
    const double y = 0.3, h = 1e-5;
    auto g = backprop_oracle(n, x, y);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            TwoLayerNet p = n, m = n;
            p.W1(i, j) += h;
            m.W1(i, j) -= h;
            double fd = (net_loss(p, x, y) - net_loss(m, x, y)) / (2 * h);
            CHECK(std::abs(fd - g.dW1(i, j)) <= 1e-5);
        }
    for (int i = 0; i < 2; ++i) {
        TwoLayerNet p = n, m = n;
        p.W2(0, i) += h;
        m.W2(0, i) -= h;
        CHECK(std::abs((net_loss(p, x, y) - net_loss(m, x, y)) / (2 * h) - g.dW2(0, i)) <= 1e-5);
    }
    // zero weights and y = o: nothing moves
    TwoLayerNet z;
    z.W1 = Matrix::Zero(2, 2);
    z.b1 = Vector::Zero(2);
    z.W2 = Matrix::Zero(1, 2);
    z.b2 = 0.0;
    auto gz = backprop_oracle(z, x, net_output(z, x));
    CHECK(max_abs(gz.dW2) == 0.0);
    CHECK(gz.db2 == 0.0);
    CHECK(max_abs(gz.db1) == 0.0);
}

TEST_CASE("backprop program and one-point SGD agree") {
    TwoLayerNet n;
    n.W1 = Matrix(2, 2);
    n.W1 << 0.3, -0.2, 0.1, 0.4;
    n.b1 = Vector(2);
    n.b1 << 0.05, -0.1;
    n.W2 = Matrix(1, 2);
    n.W2 << 0.5, -0.3;
    n.b2 = 0.1;
    Vector x(2);
    x << 1.0, 0.5;
    auto bp = program_backprop(n, x, 1.0, 0.5);
    auto rb = check_schedule(bp);
    auto want = sgd_step(n, backprop_oracle(n, x, 1.0), 0.5);
    auto got = net_from_image(bp.program, rb.trace.states.back().data);
    CHECK(max_abs(got.W1 - want.W1) <= 1e-4);
    CHECK(max_abs(got.W2 - want.W2) <= 1e-4);
    CHECK(std::abs(got.b2 - want.b2) <= 1e-4);

    auto sg = program_sgd_nn(n, x.transpose(), Vector::Constant(1, 1.0), 0.5, 1);
    auto rs = check_schedule(sg);
    auto got2 = net_from_image(sg.program, rs.trace.states.back().data);
    CHECK(max_abs(got2.W1 - got.W1) <= 1e-6);
    CHECK(max_abs(got2.b1 - got.b1) <= 1e-6);
}

TEST_CASE("emitted source carries its registry") {
    for (const char* name : {"inverse", "sgd_linear", "calculator"}) {
        auto t = example_template(name, 0);
        auto spec = registry_spec_from_source(t.source);
        CHECK(spec.name == t.spec.name);
        auto reg = make_registry(spec);
        CHECK(reg.M() == t.registry.M());
        auto p = parse_fleq(t.source, reg);
        CHECK(p.code == t.program.code);
        auto a = run_fleq(p, reg, t.cycles, SoftmaxMode::hardmax());
        auto b = run_fleq(t.program, t.registry, t.cycles, SoftmaxMode::hardmax());
        CHECK(max_abs(a.final_tape - b.final_tape) == 0.0);
    }
    CHECK_THROWS_AS(registry_spec_from_source(".registry foo\n"), Error);
    CHECK_THROWS_AS(registry_spec_from_source(".registry linalg zz=1\n"), Error);
}
