// Acceptance run: one PASS/FAIL line per criterion, with timings.
// Exit status is 0 only when every criterion passes.

#include "loopformer/blocks.hpp"
#include "loopformer/encodings.hpp"
#include "loopformer/fleq.hpp"
#include "loopformer/lego.hpp"
#include "loopformer/programs.hpp"
#include "loopformer/sigmoid_fit.hpp"
#include "loopformer/subleq.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace lf;

namespace {

struct Outcome {
    bool ok = true;
    std::vector<std::string> failures;
    std::string note;

    void expect(bool cond, const std::string& what) {
        if (cond) return;
        ok = false;
        if (failures.size() < 5) failures.push_back(what);
    }
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

uint64_t base_seed() {
    const char* s = std::getenv("LOOPFORMER_SEED");
    return s && *s ? std::strtoull(s, nullptr, 10) : 20240601ULL;
}

double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

Matrix rand_mat(std::mt19937_64& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Matrix rotation(std::mt19937_64& rng, int k) {
    return Eigen::HouseholderQR<Eigen::MatrixXd>(rand_mat(rng, k, k)).householderQ();
}

// Trace within t * eps / T of the reference each cycle, same control flow, reaches EOF.
FleqRunReport run_scheduled(const ProgramTemplate& t, Outcome& o) {
    auto rep = run_fleq(t.program, t.registry, t.cycles, SoftmaxMode::hardmax());
    o.expect(rep.control_match, t.name + ": control flow differs from the reference");
    o.expect(rep.trace.halted, t.name + ": did not reach EOF");
    const double step = t.eps_total / t.cycles;
    for (size_t i = 0; i < rep.deviation.size(); ++i)
        if (!(rep.deviation[i] <= (i + 1) * step)) {
            o.expect(false, t.name + ": cycle " + std::to_string(i + 1) + " deviation " + fmt(rep.deviation[i]) +
                                " over schedule " + fmt((i + 1) * step));
            break;
        }
    return rep;
}

Matrix final_value(const ProgramTemplate& t, const FleqRunReport& r, const std::string& v) {
    return t.program.value(v, r.trace.states.back().data);
}

bool same_trace(const MachineTrace& a, const MachineTrace& b) {
    if (a.states.size() != b.states.size()) return false;
    for (size_t i = 0; i < a.states.size(); ++i) {
        if (a.states[i].pc != b.states[i].pc || a.states[i].memory != b.states[i].memory) return false;
        if (i > 0 && a.states[i].flag != b.states[i].flag) return false;
    }
    return true;
}

// ---- 1 ----
Outcome layer_counts() {
    Outcome o;
    auto sl = parse_subleq(".mem x 3\n.mem y 5\nloop: SUBLEQ x y HALT\nSUBLEQ Z Z loop\n");
    auto st = build_subleq_transformer(sl, 8);
    o.expect(st.num_layers() == 9 && st.max_heads() == 2,
             "SUBLEQ " + std::to_string(st.num_layers()) + "/" + std::to_string(st.max_heads()));
    std::ostringstream note;
    note << "SUBLEQ " << st.num_layers() << "/" << st.max_heads();
    // smallest instances: the layer count depends only on the registry
    Matrix D = Matrix::Zero(2, 2);
    D(0, 0) = 3;
    D(1, 1) = 1;
    Matrix X = Matrix::Constant(1, 2, 0.5);
    Vector y = Vector::Constant(1, 1.0);
    TwoLayerNet net{Matrix::Constant(2, 2, 0.1), Vector::Zero(2), Matrix::Constant(1, 2, 0.2), 0.0};
    std::vector<std::pair<const char*, ProgramTemplate>> progs;
    progs.emplace_back("inverse", program_matrix_inverse(D, 1, 0.1));
    progs.emplace_back("power", program_power_iteration(D, 1, 1));
    progs.emplace_back("sgd_linear", program_sgd_linear(X, y, 0.1, 1));
    progs.emplace_back("sgd_nn", program_sgd_nn(net, X, y, 0.1, 1));
    for (const auto& [name, t] : progs) {
        auto mc = fleq_machine(t.program, t.registry);
        auto fs = build_fleq_transformer(mc);
        o.expect(fs.num_layers() == 13 && fs.max_heads() == 1,
                 std::string(name) + " " + std::to_string(fs.num_layers()) + "/" + std::to_string(fs.max_heads()));
        note << ", " << name << " " << fs.num_layers() << "/" << fs.max_heads();
    }
    o.note = note.str();
    return o;
}

// ---- 2, 3 ----
std::vector<CorpusEntry> corpus() { return subleq_corpus(base_seed(), 20, 8, 64); }

Outcome subleq_hardmax() {
    Outcome o;
    auto c = corpus();
    o.expect(c.size() >= 25, "corpus has " + std::to_string(c.size()) + " programs");
    for (const auto& e : c) {
        o.expect(e.program.n() <= 64, e.name + " uses " + std::to_string(e.program.n()) + " columns");
        auto ref = run_subleq_reference(e.program, 64, {8, true});
        auto tr = run_subleq_transformer(e.program, 8, 64, SoftmaxMode::hardmax());
        o.expect(same_trace(ref, tr.trace), e.name + ": trace differs");
    }
    o.note = std::to_string(c.size()) + " programs x 64 cycles";
    return o;
}

Outcome subleq_softmax() {
    Outcome o;
    double worst_ratio = 0.0;
    auto c = corpus();
    for (const auto& e : c) {
        auto mc = subleq_machine(e.program, 8);
        const double lam = subleq_auto_lambda(mc, 0.25);
        const double bound = appb_bound(1.0, mc.layout.rows.width(), e.program.n(), lam);
        SubleqRunOptions so;
        so.compare_hardmax = true;
        auto soft = run_subleq_transformer(e.program, 8, 64, SoftmaxMode::softmax(lam), so);
        auto hard = run_subleq_transformer(e.program, 8, 64, SoftmaxMode::hardmax());
        o.expect(same_trace(soft.trace, hard.trace), e.name + ": softmax trace differs from hardmax");
        for (size_t t = 0; t < soft.per_cycle_deviation.size(); ++t)
            if (!(soft.per_cycle_deviation[t] <= bound)) {
                o.expect(false, e.name + ": cycle " + std::to_string(t + 1) + " deviation " +
                                    fmt(soft.per_cycle_deviation[t]) + " > " + fmt(bound));
                break;
            }
        worst_ratio = std::max(worst_ratio, soft.max_precorrection_deviation / bound);
    }
    o.note = "worst deviation / bound " + fmt(worst_ratio);
    return o;
}

// ---- 4 ----
Outcome minsky() {
    using Op = MinskyInstruction::Op;
    auto add = [](int r) { return MinskyInstruction{Op::Add, r, 0}; };
    auto sub = [](int r, int n) { return MinskyInstruction{Op::Sub, r, n}; };
    std::vector<std::pair<std::string, MinskyProgram>> progs{
        // r1 := r0 through r2, restoring r0
        {"copy", {4, {4, 0, 0, 0}, {sub(0, 4), add(1), add(2), sub(3, 0), sub(2, 7), add(0), sub(3, 4)}}},
        // r0 += r1 until r1 is zero
        {"add_until_zero", {3, {2, 3, 0}, {sub(1, 3), add(0), sub(2, 0)}}},
        {"clear", {2, {5, 0}, {sub(0, 2), sub(1, 0)}}},
        // r2 = r0 * r1 (r1 consumed, r0 restored each round through r3)
        {"multiply", {5, {3, 2, 0, 0, 0},
                      {sub(1, 9), sub(0, 5), add(2), add(3), sub(4, 1), sub(3, 0), add(0), sub(4, 5), sub(4, 9)}}},
        {"increments", {1, {0}, {add(0), add(0), add(0)}}},
    };
    Outcome o;
    for (const auto& [name, mp] : progs) {
        auto direct = run_minsky(mp, 500);
        o.expect(direct.halted, name + ": direct run did not halt");
        auto tr = translate_minsky(mp);
        auto ref = run_subleq_reference(tr.program, 6 * 500, {16, true});
        auto proj = project_minsky(tr, ref);
        bool same = proj.halted && proj.states.size() == direct.states.size();
        for (size_t i = 0; same && i < proj.states.size(); ++i) same = proj.states[i] == direct.states[i];
        o.expect(same, name + ": projection differs from the direct interpreter");
    }
    o.note = "copy, add_until_zero, clear, multiply, increments";
    return o;
}

// ---- 5 ----
Outcome matmul() {
    Outcome o;
    std::mt19937_64 rng(base_seed() + 5);
    const double eps = 1e-4;
    double worst = 0.0;
    int pairs = 0;
    for (int d = 2; d <= 8; ++d) {
        auto b = build_block(matmul_block(MatmulVariant::AtB, eps, 1.0), d);
        const int count = d == 8 ? 100 - pairs : 14;
        for (int k = 0; k < count; ++k, ++pairs) {
            Matrix A = rand_mat(rng, d, d), B = rand_mat(rng, d, d);
            worst = std::max(worst, max_abs(b.run(A, B, SoftmaxMode::hardmax()) - A.transpose() * B));
        }
    }
    o.expect(pairs == 100, "ran " + std::to_string(pairs) + " pairs");
    o.expect(worst <= eps, "max error " + fmt(worst));
    // halving c halves the error
    const int d = 4;
    auto k = auto_matmul_constants(1e-3, d, 1.0, 2 * d);
    Matrix A = rand_mat(rng, d, d), B = rand_mat(rng, d, d);
    auto err = [&](double c) {
        auto b = build_block(matmul_block_fixed(MatmulVariant::AtB, {c, k.C}), d, 4 * d);
        return max_abs(b.run(A, B, SoftmaxMode::hardmax()) - A.transpose() * B);
    };
    double e1 = err(k.c), e2 = err(k.c / 2), e3 = err(k.c / 4);
    o.expect(e3 < e2 && e2 < e1, "error not monotone in c");
    o.expect(std::abs(e2 / e1 - 0.5) <= 0.05 && std::abs(e3 / e2 - 0.5) <= 0.05,
             "halving ratios " + fmt(e2 / e1) + ", " + fmt(e3 / e2));
    o.note = "max error " + fmt(worst) + ", halving ratios " + fmt(e2 / e1) + " " + fmt(e3 / e2);
    return o;
}

// ---- 6 ----
Outcome transpose() {
    Outcome o;
    std::mt19937_64 rng(base_seed() + 6);
    auto t = build_block(transpose_block(), 4);
    const double eps = 1e-6;
    // every hard head has a score gap of at least 2
    const double lam = std::log(8.0 * t.s * 4 / eps);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        Matrix A = rand_mat(rng, 4, 4);
        worst = std::max(worst, max_abs(t.run(A, Matrix::Zero(4, 4), SoftmaxMode::softmax(lam)) - A.transpose()));
        o.expect(max_abs(t.run(A, Matrix::Zero(4, 4), SoftmaxMode::hardmax()) - A.transpose()) == 0.0,
                 "hardmax transpose is not exact");
    }
    o.expect(worst <= eps, "softmax error " + fmt(worst));
    o.note = "lambda " + fmt(lam) + ", max error " + fmt(worst);
    return o;
}

// ---- 7 ----
Outcome calculator() {
    Outcome o;
    CalculatorFits f;
    const auto inv = fit_inverse(f.eps_inv, f.delta, f.C);
    const auto sq = fit_sqrt(f.eps_sqrt, f.C_sqrt);
    const double budget = calculator_budget(f);
    auto check = [&](double a, double b, double c, double d) {
        auto t = program_calculator(a, b, c, d, f, inv, sq);
        auto r = run_scheduled(t, o);
        double got = final_value(t, r, "out")(0, 0);
        double err = std::abs(got - calculator_exact(a, b, c, d));
        o.expect(err <= budget, "(" + fmt(a) + ", " + fmt(b) + ", " + fmt(c) + ", " + fmt(d) + ") error " + fmt(err));
        return std::make_pair(got, err);
    };
    auto [worked, werr] = check(5, 4, 8, 1);
    o.expect(std::abs(calculator_exact(5, 4, 8, 1) - 0.01) < 1e-15, "worked case is not 0.01");
    std::mt19937_64 rng(base_seed() + 7);
    std::uniform_real_distribution<double> abc(0.0, 5.0), dd(0.5, 3.0);
    double worst = werr;
    int n = 0;
    while (n < 50) {
        double a = abc(rng), b = abc(rng), c = abc(rng), d = dd(rng);
        double x = ((a + b) - c) * d;
        if (x < 0.2 || x > 9.5) continue;
        worst = std::max(worst, check(a, b, c, d).second);
        ++n;
    }
    o.note = "(5,4,8,1) -> " + fmt(worked) + ", worst error " + fmt(worst) + " of budget " + fmt(budget);
    return o;
}

// ---- 8 ----
Outcome inversion() {
    Outcome o;
    std::mt19937_64 rng(base_seed() + 8);
    std::uniform_real_distribution<double> ev(1.0, 3.0);
    std::vector<Matrix> mats;
    Matrix D = Matrix::Zero(2, 2);
    D(0, 0) = 1;
    D(1, 1) = 2;
    mats.push_back(D);
    for (int k = 0; k < 5; ++k) {
        Matrix Q = rotation(rng, 3);
        Vector l(3);
        for (int i = 0; i < 3; ++i) l(i) = ev(rng);
        mats.push_back(Q * l.asDiagonal() * Q.transpose());
    }
    const int T = 8;
    double worst = 0.0;
    for (const auto& A : mats) {
        auto t = program_matrix_inverse(A, T, 1.0 / A.squaredNorm());
        auto r = run_scheduled(t, o);
        Matrix X = final_value(t, r, "X");
        const double err = max_abs(X - A.inverse());
        worst = std::max(worst, err);
        o.expect(err <= 1e-3, t.name + " " + std::to_string(A.rows()) + "x" + std::to_string(A.rows()) + ": error " + fmt(err));
        // iterate k lands after 5k cycles
        const double step = t.eps_total / t.cycles;
        for (int k = 1; k <= T; ++k) {
            const int cyc = 5 * k;
            Matrix Xk = t.program.value("X", r.trace.states[cyc].data);
            o.expect(max_abs(Xk - t.history[k]) <= cyc * step, "iterate " + std::to_string(k) + " off the oracle");
        }
    }
    o.note = "6 matrices, worst |X - A^-1| " + fmt(worst);
    return o;
}

// ---- 9 ----
Outcome power() {
    Outcome o;
    std::mt19937_64 rng(base_seed() + 9);
    std::uniform_real_distribution<double> top(2.0, 2.5), rest(-1.5, 1.5);
    double worst_align = 1.0;
    int worst_T = 0;
    for (int k = 0; k < 5; ++k) {
        Vector l(4);
        l(0) = top(rng);
        for (int i = 1; i < 4; ++i) l(i) = rest(rng);
        Matrix Q = rotation(rng, 4);
        Matrix A = Q * l.asDiagonal() * Q.transpose();
        auto t = program_power_iteration(A, 0, 6);
        auto r = run_scheduled(t, o);
        Vector b = final_value(t, r, "b").col(0);
        const double align = std::abs(b.normalized().dot(Vector(t.oracle.at("top"))));
        worst_align = std::min(worst_align, align);
        worst_T = std::max(worst_T, t.cycles);
        o.expect(align >= 0.99, "alignment " + fmt(align));
        o.expect(max_abs(b - t.oracle.at("b")) <= t.eps_total, "final b off the plain-loop oracle");
    }
    o.note = "worst alignment " + fmt(worst_align) + ", longest run " + std::to_string(worst_T) + " cycles";
    return o;
}

// ---- 10 ----
TwoLayerNet random_net(std::mt19937_64& rng) {
    TwoLayerNet n;
    n.W1 = rand_mat(rng, 2, 2, -0.5, 0.5);
    n.b1 = rand_mat(rng, 2, 1, -0.2, 0.2);
    n.W2 = rand_mat(rng, 1, 2, -0.5, 0.5);
    n.b2 = 0.1;
    return n;
}

double fd_worst(const TwoLayerNet& net, const Vector& x, double y) {
    auto g = backprop_oracle(net, x, y);
    const double h = 1e-6;
    double worst = 0.0;
    auto probe = [&](double& w, double analytic) {
        const double keep = w;
        w = keep + h;
        double up = net_loss(net, x, y);
        w = keep - h;
        double down = net_loss(net, x, y);
        w = keep;
        worst = std::max(worst, std::abs((up - down) / (2 * h) - analytic));
    };
    TwoLayerNet& n = const_cast<TwoLayerNet&>(net);
    for (int i = 0; i < n.W1.rows(); ++i)
        for (int j = 0; j < n.W1.cols(); ++j) probe(n.W1(i, j), g.dW1(i, j));
    for (int i = 0; i < n.b1.size(); ++i) probe(n.b1(i), g.db1(i));
    for (int j = 0; j < n.W2.cols(); ++j) probe(n.W2(0, j), g.dW2(0, j));
    probe(n.b2, g.db2);
    return worst;
}

Outcome sgd() {
    Outcome o;
    std::mt19937_64 rng(base_seed() + 10);
    Matrix X = rand_mat(rng, 3, 2);
    Vector y = rand_mat(rng, 3, 1);
    auto lin = program_sgd_linear(X, y, 0.3, 2);
    auto rl = run_scheduled(lin, o);
    const double lin_err = max_abs(final_value(lin, rl, "w") - lin.oracle.at("w"));
    o.expect(lin_err <= lin.eps_total, "linear weights off by " + fmt(lin_err));

    TwoLayerNet net = random_net(rng);
    Matrix Xn = rand_mat(rng, 3, 2);
    Vector yn = rand_mat(rng, 3, 1);
    auto nn = program_sgd_nn(net, Xn, yn, 0.5, 2);
    auto rn = run_scheduled(nn, o);
    auto want = sgd_nn_oracle(net, Xn, yn, 0.5, 2);
    auto got = net_from_image(nn.program, rn.trace.states.back().data);
    double nn_err = std::max({max_abs(got.W1 - want.W1), max_abs(got.b1 - want.b1), max_abs(got.W2 - want.W2),
                              std::abs(got.b2 - want.b2)});
    o.expect(nn_err <= nn.eps_total, "net weights off by " + fmt(nn_err));

    double fd = 0.0;
    for (int k = 0; k < 10; ++k) {
        TwoLayerNet n = random_net(rng);
        Vector x = rand_mat(rng, 2, 1);
        fd = std::max(fd, fd_worst(n, x, rand_mat(rng, 1, 1)(0, 0)));
    }
    o.expect(fd <= 1e-5, "finite differences off by " + fmt(fd));
    o.note = "linear " + fmt(lin_err) + ", net " + fmt(nn_err) + " (" + std::to_string(nn.cycles) + " cycles), fd " + fmt(fd);
    return o;
}

// ---- 11 ----
Outcome fits() {
    Outcome o;
    auto inv = fit_inverse(0.05, 0.1, 10.0);
    auto sq = fit_sqrt(0.05, 16.0);
    double ei = inv.max_error([](double x) { return 1.0 / x; }, 200, true);
    double es = sq.max_error([](double x) { return std::sqrt(x); }, 200);
    o.expect(ei <= 0.05, "inverse fit error " + fmt(ei));
    o.expect(es <= 0.05, "sqrt fit error " + fmt(es));
    std::ostringstream note;
    note << "errors " << fmt(ei) << "/" << fmt(es) << "; terms (inverse, scale | sqrt, scale):";
    size_t pi = 0, ps = 0;
    for (double eps : {0.2, 0.1, 0.05}) {
        auto a = fit_inverse(eps, 0.1, 10.0);
        auto b = fit_sqrt(eps, 16.0);
        const double sa = inverse_term_scale(eps, 0.1, 10.0), sb = sqrt_term_scale(eps, 16.0);
        o.expect(a.terms.size() > pi && b.terms.size() > ps, "term counts do not grow as eps shrinks");
        o.expect(a.terms.size() <= 4 * sa + 4 && b.terms.size() <= 4 * sb + 4, "term count far above the asymptotic scale");
        pi = a.terms.size();
        ps = b.terms.size();
        note << " eps " << eps << ": " << a.terms.size() << ", " << fmt(sa) << " | " << b.terms.size() << ", " << fmt(sb) << ";";
    }
    o.note = note.str();
    return o;
}

// ---- 12 ----
Matrix data_tape(const TapeLayout& l, std::mt19937_64& rng, int target) {
    Matrix x = l.blank_tape();
    std::uniform_int_distribution<int> bit(0, 1);
    for (int j = l.scratch(); j < l.n; ++j)
        for (int i = 0; i < l.rows.height("SRC"); ++i) x(l.rows.row("SRC", i), j) = bit(rng) ? 1.0 : -1.0;
    auto code = encode_position(target, l.n);
    for (int j = 0; j < l.scratch(); ++j)
        for (size_t i = 0; i < code.bits.size(); ++i) x(l.rows.row("PTR", static_cast<int>(i)), j) = code.bits[i];
    return x;
}

void put_code(Matrix& x, const TapeLayout& l, const std::string& block, int col, int v) {
    auto c = encode_position(v, l.n);
    for (size_t i = 0; i < c.bits.size(); ++i) x(l.rows.row(block, static_cast<int>(i)), col) = c.bits[i];
}

Matrix column_of(const std::vector<int>& bits) {
    Matrix x = Matrix::Zero(static_cast<int>(bits.size()), 1);
    for (size_t i = 0; i < bits.size(); ++i) x(i, 0) = bits[i];
    return x;
}

std::vector<double> top_rows(const Matrix& x, int n) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i) v.push_back(x(i, 0));
    return v;
}

Outcome invariants() {
    Outcome o;
    std::mt19937_64 rng(base_seed() + 12);
    std::vector<std::string> suites;

    // softmax columns sum to one at any temperature
    for (int it = 0; it < 50; ++it) {
        Matrix m = rand_mat(rng, 7, 5, -30.0, 30.0);
        for (auto mode : {SoftmaxMode::softmax(0.3), SoftmaxMode::softmax(40.0), SoftmaxMode::hardmax()}) {
            Matrix s = softmax_columns(m, mode);
            for (int j = 0; j < s.cols(); ++j) o.expect(std::abs(s.col(j).sum() - 1.0) < 1e-12, "softmax column sum");
        }
    }
    suites.push_back("softmax");

    // read touches only DST on scratch; write only the target column
    {
        auto l = make_simple_layout(12, 2, 4);
        const double C = default_gate(1.0, 4);
        auto read = build_read_layer(l, "PTR", "SRC", "DST", C);
        auto write = build_write_layer(l, "PTR", "DST", "SRC", C);
        for (int target = l.scratch(); target < l.n; ++target) {
            Matrix x = data_tape(l, rng, target);
            Matrix y = apply_layer(x, read, SoftmaxMode::hardmax());
            Matrix want = x;
            for (int j = 0; j < l.scratch(); ++j)
                for (int i = 0; i < 4; ++i) want(l.rows.row("DST", i), j) = x(l.rows.row("SRC", i), target);
            o.expect(max_abs(y - want) == 0.0, "read changed more than DST");
            Matrix z = y;
            for (int j = 0; j < l.scratch(); ++j)
                for (int i = 0; i < 4; ++i) z(l.rows.row("DST", i), j) = (i % 2) ? 1.0 : -1.0;
            Matrix w = apply_layer(z, write, SoftmaxMode::hardmax());
            Matrix wwant = z;
            for (int i = 0; i < 4; ++i) wwant(l.rows.row("SRC", i), target) = (i % 2) ? 1.0 : -1.0;
            o.expect(max_abs(w - wwant) == 0.0, "write changed more than the target column");
        }
    }
    suites.push_back("read/write");

    // branch mux, every flag, counter and target on n = 16
    {
        auto l = make_simple_layout(16, 1, 1);
        auto layers = build_branch_layers(l, "FLAG", "PTR", "TGT");
        TransformerStack st(l.rows.width(), layers);
        for (int flag = 0; flag <= 1; ++flag)
            for (int counter = 0; counter + 1 < 16; ++counter)
                for (int target = 0; target < 16; ++target) {
                    Matrix x = l.blank_tape();
                    put_code(x, l, "PTR", 0, counter);
                    put_code(x, l, "TGT", 0, target);
                    x(l.rows.row("FLAG"), 0) = flag;
                    Matrix want = x;
                    put_code(want, l, "PTR", 0, flag ? target : counter + 1);
                    o.expect(max_abs(st.forward(x, SoftmaxMode::hardmax()) - want) == 0.0, "branch mux");
                }
    }
    suites.push_back("mux");

    // adder and negation, every input for N <= 5
    for (int d = 1; d <= 5; ++d) {
        FeedForward f = build_adder_ffn(d);
        const int n = 1 << d;
        for (int a = 0; a < n; ++a)
            for (int b = 0; a + b < n; ++b) {
                auto bits = encode_position(a, n).bits;
                auto cb = encode_position(b, n).bits;
                bits.insert(bits.end(), cb.begin(), cb.end());
                o.expect(decode_position(top_rows(apply_ffn(column_of(bits), f), d)) == a + b, "adder");
            }
    }
    for (int N = 2; N <= 5; ++N) {
        auto [flip, inc] = build_bitflip_and_add_one(N);
        for (int64_t v = int_min(N); v <= int_max(N); ++v) {
            Matrix y = apply_ffn(apply_ffn(column_of(encode_int(v, N).bits), flip), inc);
            o.expect(decode_int_bits(top_rows(y, N)) == -v, "negation");
        }
    }
    suites.push_back("adder/negation");

    // error correction snaps within the radius and is idempotent
    {
        auto l = make_simple_layout(8, 1, 4);
        auto ec = build_error_correction_layer(l, 0.25, {"SRC"});
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
            o.expect(max_abs(y - clean) < 1e-12, "correction did not snap");
            o.expect(max_abs(apply_layer(y, ec, SoftmaxMode::hardmax()) - y) < 1e-12, "correction not idempotent");
        }
    }
    suites.push_back("correction");

    // blocks keep a zero tape zero, and inside FLEQ only the written slot changes
    {
        auto t = example_template("backprop", 0);
        auto mc = fleq_machine(t.program, t.registry);
        for (const auto& b : mc.blocks) {
            TransformerStack st(b.r(), b.layers);
            for (auto mode : {SoftmaxMode::hardmax(), SoftmaxMode::softmax(5.0)})
                o.expect(max_abs(st.forward(Matrix::Zero(b.r(), b.s + 3), mode)) == 0.0, b.name + " not inert");
        }
        auto rep = run_fleq(t.program, t.registry, t.cycles, SoftmaxMode::hardmax());
        const int d = t.program.d;
        for (size_t k = 1; k < rep.trace.states.size(); ++k) {
            const auto& prev = rep.trace.states[k - 1];
            const auto& cur = rep.trace.states[k];
            const auto& in = prev.code[prev.pc];
            const bool data_op = t.registry.blocks[in.m].kind == BlockKind::Data;
            Matrix diff = cur.data - prev.data;
            if (data_op && in.c < t.program.data_size()) diff.middleCols(in.c, std::min(d, t.program.data_size() - in.c)).setZero();
            o.expect(max_abs(diff) <= 1e-12, "cycle " + std::to_string(k) + " changed memory outside its output");
            for (size_t w = 0; w < cur.code.size(); ++w) {
                const bool target = !data_op && in.c == t.program.instr_addr(static_cast<int>(w));
                if (!target) o.expect(cur.code[w] == prev.code[w], "cycle " + std::to_string(k) + " changed another instruction");
            }
        }
    }
    suites.push_back("block isolation");

    std::string s;
    for (const auto& x : suites) s += (s.empty() ? "" : ", ") + x;
    o.note = s;
    return o;
}

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    std::vector<Criterion> all{
        {1, "layer/head counts", 1.0, layer_counts},
        {2, "SUBLEQ hardmax differential", 30.0, subleq_hardmax},
        {3, "SUBLEQ softmax fidelity", 120.0, subleq_softmax},
        {4, "Minsky harness", 5.0, minsky},
        {5, "matmul block", 10.0, matmul},
        {6, "transpose block", 5.0, transpose},
        {7, "calculator", 60.0, calculator},
        {8, "Newton inversion", 120.0, inversion},
        {9, "power iteration", 120.0, power},
        {10, "SGD differential", 120.0, sgd},
        {11, "sigmoid-sum fits", 10.0, fits},
        {12, "invariant suites", 60.0, invariants},
    };
    std::printf("seed %llu\n", static_cast<unsigned long long>(base_seed()));
    int failed = 0;
    for (const auto& c : all) {
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.ok = false;
            o.failures.push_back(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > c.budget_s) o.expect(false, "took " + fmt(secs) + " s, budget " + fmt(c.budget_s) + " s");
        std::printf("%s [%2d] %-30s %7.2f s  %s\n", o.ok ? "PASS" : "FAIL", c.id, c.name.c_str(), secs, o.note.c_str());
        for (const auto& f : o.failures) std::printf("       - %s\n", f.c_str());
        std::fflush(stdout);
        if (!o.ok) ++failed;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(all.size()) - failed, all.size());
    return failed ? 1 : 0;
}
