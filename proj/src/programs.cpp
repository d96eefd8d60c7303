#include "loopformer/programs.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <sstream>

namespace lf {

namespace {

// shortest of %.15g / %.17g that reads back exactly
std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.15g", v);
    if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Writes .fleq text and works out operand shapes from declared variables.
class Emitter {
public:
    explicit Emitter(int d) : d_(d) {}

    void matrix(const std::string& name, const Matrix& m) {
        check_fit(name, m.rows(), m.cols());
        decl_ << ".matrix " << name << " " << m.rows() << " " << m.cols();
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) decl_ << " " << num(m(i, j));
        decl_ << "\n";
        shape_[name] = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
    }
    void mem(const std::string& name, double v) { matrix(name, Matrix::Constant(1, 1, v)); }
    void var(const std::string& name, int r, int c) {
        check_fit(name, r, c);
        decl_ << ".var " << name << " " << r << " " << c << "\n";
        shape_[name] = {r, c};
    }
    void label(const std::string& l) { pending_ = l; }
    void comment(const std::string& c) { body_ << "; " << c << "\n"; }

    void call(const std::string& c, const std::string& f, const std::string& a, const std::string& b, int dh, int dw) {
        line() << "CALL " << c << " = " << f << "(" << a << ", " << b << ") [" << dh << " " << dw << "]\n";
    }
    void raw(const std::string& text) { line() << text << "\n"; }

    // c = a + b or a - b, same shapes
    void add(const std::string& c, const std::string& a, const std::string& b, const char* f = "add") {
        auto [r, k] = shape(a);
        ensure(c, r, k);
        call(c, f, a, b, r, k);
    }
    void sub(const std::string& c, const std::string& a, const std::string& b) { add(c, a, b, "sub"); }
    // c = a^T b; both operands are read over max(p, q) columns
    void mul(const std::string& c, const std::string& a, const std::string& b, int rows = -1) {
        auto [ar, p] = shape(a);
        auto [br, q] = shape(b);
        (void)ar;
        (void)br;
        const int dh = rows < 0 ? p : rows;
        ensure(c, dh, q);
        call(c, "mul", a, b, dh, std::max(p, q));
    }
    void transp(const std::string& c, const std::string& a) {
        auto [r, k] = shape(a);
        ensure(c, k, r);
        call(c, "transp", a, "b0", k, std::max(r, k));
    }
    void sigmoid(const std::string& c, const std::string& sel, const std::string& a) {
        auto [r, k] = shape(a);
        if (r != 1) fail(ErrorCode::Internal, "sigmoid input must be a row");
        ensure(c, 1, k);
        call(c, "sigmoid", sel, a, 1, k);
    }
    // c = c + 1 and loop back to `target` while c <= 0
    void count(const std::string& c, const std::string& target) { raw("FLEQ " + c + " one " + c + " add " + c + " " + target + " 1 1"); }
    void halt() { raw("HALT"); }

    std::pair<int, int> shape(const std::string& n) const {
        auto it = shape_.find(n);
        if (it == shape_.end()) fail(ErrorCode::Internal, "emitter: unknown variable " + n);
        return it->second;
    }
    std::string text() const { return decl_.str() + body_.str(); }

private:
    std::ostringstream& line() {
        if (!pending_.empty()) body_ << pending_ << ": ";
        else body_ << "    ";
        pending_.clear();
        return body_;
    }
    void ensure(const std::string& c, int r, int k) {
        if (!shape_.count(c)) var(c, r, k);
    }
    void check_fit(const std::string& name, long r, long c) const {
        if (r < 1 || c < 1 || r > d_ || c > d_)
            fail(ErrorCode::Validation, name + " does not fit in a " + std::to_string(d_) + " x " + std::to_string(d_) + " slot");
    }

    int d_;
    std::ostringstream decl_, body_;
    std::map<std::string, std::pair<int, int>> shape_;
    std::string pending_;
};

ProgramTemplate make(const std::string& name, const RegistrySpec& spec, FunctionRegistry reg, const std::string& body) {
    ProgramTemplate t;
    t.name = name;
    t.spec = spec;
    t.registry = std::move(reg);
    t.source = registry_directive(spec) + body;
    t.program = parse_fleq(t.source, t.registry);
    return t;
}

ProgramTemplate make(const std::string& name, const RegistrySpec& spec, const std::string& body) {
    return make(name, spec, make_registry(spec), body);
}

RegistrySpec spec_of(const std::string& name, const RegistryOptions& o, int step = 0) {
    RegistrySpec r;
    r.name = name;
    r.opts = o;
    r.step = step;
    return r;
}

double frob_bound(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Appends never-executed copies of labelled words (label, copy name) for the reset idiom.
// Copies keep every field, fall-through target included, so a reset is bit-exact.
std::string with_copies(const std::string& src, const FunctionRegistry& reg,
                        const std::vector<std::pair<std::string, std::string>>& copies) {
    std::string probe_src = src;
    for (const auto& c : copies) probe_src += c.second + ": HALT\n";
    FleqProgram probe = parse_fleq(probe_src, reg);
    auto name_of = [&](int addr) {
        for (const auto& v : probe.vars)
            if (addr >= v.addr && addr < v.addr + probe.d)
                return addr == v.addr ? v.name : v.name + "+" + std::to_string(addr - v.addr);
        return std::to_string(addr);
    };
    std::string tail;
    for (const auto& [label, copy] : copies) {
        const auto& in = probe.code[probe.labels.at(label)];
        tail += copy + ": FLEQ " + name_of(in.a) + " " + name_of(in.b) + " " + name_of(in.c) + " " +
                reg.blocks[in.m].name + " " + name_of(in.flag) + " " + std::to_string(in.p) + " " +
                std::to_string(in.dh) + " " + std::to_string(in.dw) + "\n";
    }
    return src + tail;
}

}  // namespace

RegistrySpec registry_spec_from_source(const std::string& text) {
    RegistrySpec r;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    bool seen = false;
    while (std::getline(in, raw)) {
        ++line;
        auto cut = raw.find_first_of(";#");
        if (cut != std::string::npos) raw = raw.substr(0, cut);
        std::istringstream ls(raw);
        std::string op;
        if (!(ls >> op) || op != ".registry") continue;
        auto err = [&](const std::string& m) { fail(ErrorCode::Parse, "line " + std::to_string(line) + ": " + m); };
        if (seen) err("more than one .registry line");
        seen = true;
        if (!(ls >> r.name)) err(".registry needs a name");
        if (r.name != "linalg" && r.name != "calculator" && r.name != "sgd" && r.name != "nn")
            err("unknown registry '" + r.name + "'");
        for (std::string kv; ls >> kv;) {
            auto eq = kv.find('=');
            if (eq == std::string::npos) err("expected key=value, got '" + kv + "'");
            const std::string k = kv.substr(0, eq);
            double v = 0.0;
            try {
                size_t used = 0;
                v = std::stod(kv.substr(eq + 1), &used);
                if (used != kv.size() - eq - 1) throw std::invalid_argument(kv);
            } catch (const std::exception&) {
                err("bad value in '" + kv + "'");
            }
            if (k == "d") r.opts.d = static_cast<int>(v);
            else if (k == "eps") r.opts.eps = v;
            else if (k == "bound") r.opts.entry_bound = v;
            else if (k == "product") r.opts.product_bound = v;
            else if (k == "values") r.opts.value_bound = v;
            else if (k == "step") r.step = static_cast<int>(v);
            else if (k == "tol") r.tolerance = v;
            else if (k == "eps_inv") r.fits.eps_inv = v;
            else if (k == "delta") r.fits.delta = v;
            else if (k == "C") r.fits.C = v;
            else if (k == "eps_sqrt") r.fits.eps_sqrt = v;
            else if (k == "C_sqrt") r.fits.C_sqrt = v;
            else err("unknown key '" + k + "'");
        }
    }
    if (r.name == "calculator") {
        r.opts.d = 3;
        r.fits.eps_lin = r.opts.eps;
    }
    if (r.opts.d < 1 || r.opts.d > 64) fail(ErrorCode::Parse, "registry d out of range");
    return r;
}

std::string registry_directive(const RegistrySpec& r) {
    std::string s = ".registry " + r.name + " d=" + std::to_string(r.opts.d) + " eps=" + num(r.opts.eps) +
                    " bound=" + num(r.opts.entry_bound) + " product=" + num(r.opts.product_bound) +
                    " values=" + num(r.opts.value_bound);
    if (r.tolerance > 0) s += " tol=" + num(r.tolerance);
    if (r.name == "sgd" || r.name == "nn") s += " step=" + std::to_string(r.step);
    if (r.name == "calculator")
        s += " eps_inv=" + num(r.fits.eps_inv) + " delta=" + num(r.fits.delta) + " C=" + num(r.fits.C) +
             " eps_sqrt=" + num(r.fits.eps_sqrt) + " C_sqrt=" + num(r.fits.C_sqrt);
    return s + "\n";
}

FunctionRegistry make_registry(const RegistrySpec& r) {
    const int step = r.step > 0 ? r.step : r.opts.d;
    if (r.name == "linalg") return linalg_registry(r.opts);
    if (r.name == "sgd") return sgd_registry(r.opts, step, false);
    if (r.name == "nn") return sgd_registry(r.opts, step, true);
    if (r.name == "calculator") {
        RegistryOptions o = r.opts;
        o.d = 3;
        return calculator_registry(fit_inverse(r.fits.eps_inv, r.fits.delta, r.fits.C),
                                   fit_sqrt(r.fits.eps_sqrt, r.fits.C_sqrt), o);
    }
    fail(ErrorCode::Validation, "unknown registry '" + r.name + "'");
}

void finish_template(ProgramTemplate& t, int max_steps) {
    t.program.validate(t.registry);
    FleqState st;
    st.data = t.program.data;
    st.code = t.program.code;
    int k = 0;
    while (st.pc != t.program.eof()) {
        if (k >= max_steps) fail(ErrorCode::Validation, t.name + ": reference run did not reach EOF");
        st = fleq_step(t.program, t.registry, st);
        ++k;
    }
    t.cycles = k;
    // record the tolerance in the directive so the text alone reproduces the run
    t.spec.tolerance = t.eps_total;
    if (t.source.rfind(".registry", 0) == 0) t.source = registry_directive(t.spec) + t.source.substr(t.source.find('\n') + 1);
}

// ---- calculator ----

double calculator_exact(double a, double b, double c, double d) {
    const double x = ((a + b) - c) * d;
    if (!(x > 0)) fail(ErrorCode::Validation, "calculator input ((a + b) - c) d must be positive");
    return std::sqrt(1.0 / x) / 100.0;
}

double calculator_budget(const CalculatorFits& f) { return f.eps_inv + f.eps_sqrt + 10.0 * f.eps_lin; }

ProgramTemplate program_calculator(double a, double b, double c, double d, const CalculatorFits& f) {
    return program_calculator(a, b, c, d, f, fit_inverse(f.eps_inv, f.delta, f.C), fit_sqrt(f.eps_sqrt, f.C_sqrt));
}

ProgramTemplate program_calculator(double a, double b, double c, double d, const CalculatorFits& f,
                                   const SigmoidSum& inv, const SigmoidSum& sq) {
    const double x = ((a + b) - c) * d;
    if (x < f.delta || x > f.C)
        fail(ErrorCode::Validation, "calculator intermediate " + num(x) + " is outside the fitted domain [" + num(f.delta) +
                                        ", " + num(f.C) + "]");
    if (1.0 / f.delta > f.C_sqrt) fail(ErrorCode::Validation, "sqrt fit does not cover the inverse range");
    RegistryOptions o;
    o.d = 3;
    o.eps = f.eps_lin;
    // one bound for the whole domain keeps the registry the same across inputs
    o.entry_bound = std::max({std::abs(a) + std::abs(b) + std::abs(c), std::abs(d), 16.0});
    RegistrySpec spec = spec_of("calculator", o);
    spec.fits = f;
    Emitter e(3);
    e.mem("a", a);
    e.mem("b", b);
    e.mem("c", c);
    e.mem("d", d);
    Matrix si = Matrix::Zero(2, 1), ss = Matrix::Zero(3, 1);
    si(1, 0) = 1.0;
    ss(2, 0) = 1.0;
    e.matrix("sel_inv", si);
    e.matrix("sel_sqrt", ss);
    e.add("t1", "a", "b");
    e.sub("t2", "t1", "c");
    e.mul("t3", "t2", "d");
    e.sigmoid("t4", "sel_inv", "t3");
    e.sigmoid("t5", "sel_sqrt", "t4");
    e.var("out", 1, 1);
    e.call("out", "perc", "t5", "a0", 1, 1);
    auto t = make("calculator", spec, calculator_registry(inv, sq, o), e.text());
    t.outputs = {"out"};
    t.oracle["out"] = Matrix::Constant(1, 1, calculator_exact(a, b, c, d));
    t.eps_total = calculator_budget(f);
    finish_template(t);
    return t;
}

// ---- Newton inversion ----

std::vector<Matrix> newton_inverse_oracle(const Matrix& A, int T, double eps_init) {
    const int k = static_cast<int>(A.rows());
    const Matrix I = Matrix::Identity(k, k);
    std::vector<Matrix> xs{eps_init * A.transpose()};
    for (int i = 0; i < T; ++i) {
        const Matrix& X = xs.back();
        xs.push_back(X * (2.0 * I - A * X));
    }
    double e0 = (I - A * xs.front()).norm(), e1 = (I - A * xs.back()).norm();
    if (!(e1 < e0) && e0 > 1e-12) fail(ErrorCode::Validation, "Newton iteration diverges for this initialization");
    return xs;
}

ProgramTemplate program_matrix_inverse(const Matrix& A, int T, double eps_init) {
    if (A.rows() != A.cols()) fail(ErrorCode::Validation, "matrix inverse needs a square matrix");
    if (T < 1) fail(ErrorCode::Validation, "T must be at least 1");
    const int k = static_cast<int>(A.rows());
    auto hist = newton_inverse_oracle(A, T, eps_init);
    double bound = 2.0;
    for (const auto& X : hist) bound = std::max({bound, frob_bound(X), frob_bound(A * X)});
    bound = std::max(bound, frob_bound(A));
    RegistryOptions o;
    o.d = std::max(4, k);
    o.entry_bound = bound;
    double prod = 1.0;
    for (size_t i = 0; i + 1 < hist.size(); ++i) prod = std::max({prod, frob_bound(A * hist[i]), frob_bound(hist[i + 1])});
    o.product_bound = 2.0 * prod;
    o.eps = 1e-3 / (5.0 * T + 1.0) / 4.0;
    Emitter e(o.d);
    e.matrix("AT", A.transpose());
    e.matrix("X", eps_init * A.transpose());
    e.matrix("twoI", 2.0 * Matrix::Identity(k, k));
    e.mem("t", -(T - 1));
    e.mem("one", 1.0);
    e.label("loop");
    e.mul("P", "AT", "X");  // A X
    e.sub("Q", "twoI", "P");
    e.transp("XT", "X");
    e.mul("X", "XT", "Q");  // X (2I - A X)
    e.count("t", "loop");
    auto t = make("matrix_inverse", spec_of("linalg", o), e.text());
    t.outputs = {"X"};
    t.oracle["X"] = hist.back();
    t.history = hist;
    finish_template(t);
    return t;
}

// ---- power iteration ----

PowerOracle power_iteration_oracle(const Matrix& A, int T_outer, int T_inner, const Vector& b0, double x0) {
    PowerOracle o;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(A.selfadjointView<Eigen::Upper>()));
    if (es.info() != Eigen::Success) fail(ErrorCode::Numeric, "eigen decomposition failed");
    std::vector<std::pair<double, int>> mags;
    for (int i = 0; i < A.rows(); ++i) mags.push_back({std::abs(es.eigenvalues()(i)), i});
    std::sort(mags.rbegin(), mags.rend());
    if (mags.size() > 1) {
        o.gap_ratio = mags[1].first / mags[0].first;
        o.degenerate = mags[0].first - mags[1].first < 1e-9;
    }
    Vector b = b0;
    auto seen = [&](double v) { o.product_max = std::max(o.product_max, std::abs(v)); };
    for (int k = 0; k < T_outer; ++k) {
        b = A * b;
        seen(b.cwiseAbs().maxCoeff());
        const double S = b.squaredNorm();
        seen(S);
        double x = x0;
        for (int i = 0; i < T_inner; ++i) {
            if (k == 0) o.newton_error.push_back(std::abs(x * std::sqrt(S) - 1.0));
            seen(x * x);
            seen(0.5 * S * x * x);
            x = x * (1.5 - 0.5 * S * x * x);
            seen(x);
        }
        if (k == 0) o.newton_error.push_back(std::abs(x * std::sqrt(S) - 1.0));
        b *= x;
        seen(b.cwiseAbs().maxCoeff());
    }
    o.b = b;
    o.top = es.eigenvectors().col(mags[0].second);
    if (o.top.dot(b) < 0) o.top = -o.top;
    return o;
}

ProgramTemplate program_power_iteration(const Matrix& A, int T_outer, int T_inner) {
    if (A.rows() != A.cols()) fail(ErrorCode::Validation, "power iteration needs a square matrix");
    if (T_inner < 1) fail(ErrorCode::Validation, "T_inner must be at least 1");
    const int k = static_cast<int>(A.rows());
    const Vector b0 = Vector::Constant(k, 1.0 / std::sqrt(static_cast<double>(k)));
    // 1 / ||A||_F sits below 1 / sqrt(S), inside the Newton basin (0, sqrt(3 / S))
    const double x0 = 1.0 / A.norm();
    if (T_outer <= 0) {
        auto probe = power_iteration_oracle(A, 1, 1, b0, x0);
        if (probe.degenerate) fail(ErrorCode::Validation, "no strictly dominant eigenvalue; pass T_outer explicitly");
        T_outer = static_cast<int>(std::ceil(std::log(1e-2 / 4) / std::log(std::max(probe.gap_ratio, 1e-3)))) + 2;
    }
    auto orc = power_iteration_oracle(A, T_outer, T_inner, b0, x0);
    const double lam = A.cwiseAbs().rowwise().sum().maxCoeff();
    RegistryOptions o;
    o.d = std::max(4, k);
    o.entry_bound = std::max({lam * lam, 2.0, frob_bound(A)});
    o.product_bound = 2.0 * std::max(orc.product_max, 1.0);
    const double cycles = T_outer * (9.0 + 5.0 * T_inner) + 1;
    o.eps = 1e-2 / cycles / 4.0;
    Emitter e(o.d);
    e.matrix("AT", A.transpose());
    e.matrix("b", Matrix(b0));
    e.mem("half", 0.5);
    e.mem("threehalf", 1.5);
    e.mem("x0", x0);
    e.mem("one", 1.0);
    e.mem("t1", -(T_outer - 1));
    e.mem("t2", -(T_inner - 1));
    e.mem("t2init", -(T_inner - 1));
    e.label("outer");
    e.mul("b", "AT", "b");  // A b
    e.mul("S", "b", "b");
    e.mul("hS", "half", "S");
    e.add("x", "x0", "a0");
    e.label("inner");
    e.mul("x2", "x", "x");
    e.mul("q", "hS", "x2");
    e.sub("r", "threehalf", "q");
    e.mul("x", "x", "r");
    e.count("t2", "inner");
    e.add("t2", "t2init", "a0");
    e.transp("br", "b");
    e.mul("br", "x", "br");
    e.transp("b", "br");
    e.count("t1", "outer");
    auto t = make("power_iteration", spec_of("linalg", o), e.text());
    t.outputs = {"b"};
    t.oracle["b"] = orc.b;
    t.oracle["top"] = orc.top;
    t.eps_total = 1e-2;
    finish_template(t);
    return t;
}

// ---- linear SGD ----

Vector sgd_linear_oracle(const Matrix& X, const Vector& y, double eta, int T, const Vector& w0) {
    Vector w = w0;
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < X.rows(); ++i) {
            Vector x = X.row(i).transpose();
            w -= eta * (w.dot(x) - y(i)) * x;
        }
    return w;
}

ProgramTemplate program_sgd_linear(const Matrix& X, const Vector& y, double eta, int T, const Vector& w0_in) {
    const int D = static_cast<int>(X.rows()), dim = static_cast<int>(X.cols());
    if (D < 1 || T < 1) fail(ErrorCode::Validation, "need at least one point and one epoch");
    if (y.size() != D) fail(ErrorCode::Validation, "one label per point");
    const Vector w0 = w0_in.size() ? w0_in : Vector::Zero(dim);
    RegistryOptions o;
    o.d = std::max(4, dim);
    Vector wf = sgd_linear_oracle(X, y, eta, T, w0);
    double bound = std::max({2.0, frob_bound(X), y.cwiseAbs().maxCoeff(), wf.cwiseAbs().maxCoeff() * 2.0});
    o.entry_bound = bound;
    {
        double prod = 1.0;
        Vector w = w0;
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < D; ++i) {
                Vector x = X.row(i).transpose();
                const double r = w.dot(x) - y(i);
                prod = std::max({prod, std::abs(w.dot(x)), std::abs(eta * r), std::abs(eta * r) * x.cwiseAbs().maxCoeff()});
                w -= eta * r * x;
            }
        o.product_bound = 2.0 * prod;
    }
    o.eps = 1e-3 / (T * (11.0 * D + 5.0) + 1.0) / 4.0;
    Emitter e(o.d);
    e.matrix("w", Matrix(w0));
    for (int i = 0; i < D; ++i) e.matrix("x" + std::to_string(i), Matrix(X.row(i).transpose()));
    for (int i = 0; i < D; ++i) e.mem("y" + std::to_string(i), y(i));
    e.mem("eta", eta);
    e.mem("one", 1.0);
    e.mem("ti", -(D - 1));
    e.mem("tiinit", -(D - 1));
    e.mem("te", -(T - 1));
    e.var("p", 1, 1);
    e.var("r", 1, 1);
    // the three lines that read a data point are rewritten in place
    e.label("Lx");
    e.mul("p", "w", "x0");
    e.label("Ly");
    e.sub("r", "p", "y0");
    e.mul("r", "eta", "r");
    e.label("Lt");
    e.transp("xt", "x0");
    e.mul("g", "r", "xt");
    e.transp("gt", "g");
    e.sub("w", "w", "gt");
    e.call("Lx", "incr_b", "Lx", "b0", 1, 1);
    e.call("Ly", "incr_b", "Ly", "b0", 1, 1);
    e.call("Lt", "incr_a", "Lt", "b0", 1, 1);
    e.count("ti", "Lx");
    e.add("ti", "tiinit", "a0");
    e.call("Lx", "reset", "b0", "Tx", 1, 1);
    e.call("Ly", "reset", "b0", "Ty", 1, 1);
    e.call("Lt", "reset", "b0", "Tt", 1, 1);
    e.count("te", "Lx");
    e.halt();
    auto spec = spec_of("sgd", o, o.d);
    auto reg = make_registry(spec);
    auto t = make("sgd_linear", spec, reg, with_copies(e.text(), reg, {{"Lx", "Tx"}, {"Ly", "Ty"}, {"Lt", "Tt"}}));
    t.outputs = {"w"};
    t.oracle["w"] = wf;
    finish_template(t);
    return t;
}

// ---- two-layer net ----

double net_output(const TwoLayerNet& net, const Vector& x) {
    Vector z = net.W1 * x + net.b1;
    Vector h = z.unaryExpr([](double v) { return sigmoid(v); });
    return (net.W2 * h)(0) + net.b2;
}

double net_loss(const TwoLayerNet& net, const Vector& x, double y) {
    double r = net_output(net, x) - y;
    return 0.5 * r * r;
}

NetGrads backprop_oracle(const TwoLayerNet& net, const Vector& x, double y) {
    Vector z = net.W1 * x + net.b1;
    Vector h = z.unaryExpr([](double v) { return sigmoid(v); });
    const double d2 = (net.W2 * h)(0) + net.b2 - y;
    NetGrads g;
    g.dW2 = d2 * h.transpose();
    g.db2 = d2;
    Vector d1 = (h.array() * (1.0 - h.array()) * (net.W2.transpose() * d2).array()).matrix();
    g.dW1 = d1 * x.transpose();
    g.db1 = d1;
    return g;
}

TwoLayerNet sgd_step(const TwoLayerNet& net, const NetGrads& g, double eta) {
    TwoLayerNet n = net;
    n.W1 -= eta * g.dW1;
    n.b1 -= eta * g.db1;
    n.W2 -= eta * g.dW2;
    n.b2 -= eta * g.db2;
    return n;
}

TwoLayerNet sgd_nn_oracle(TwoLayerNet net, const Matrix& X, const Vector& y, double eta, int T) {
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < X.rows(); ++i) net = sgd_step(net, backprop_oracle(net, X.row(i).transpose(), y(i)), eta);
    return net;
}

TwoLayerNet net_from_image(const FleqProgram& p, const Matrix& data) {
    TwoLayerNet n;
    n.W1 = p.value("W1T", data).transpose();
    n.b1 = p.value("b1", data).col(0);
    n.W2 = p.value("W2c", data).transpose();
    n.b2 = p.value("b2", data)(0, 0);
    return n;
}

namespace {

ProgramTemplate emit_nn(const TwoLayerNet& net, const Matrix& X, const Vector& y, double eta, int T, bool wrap) {
    const int m = static_cast<int>(net.W1.rows()), n0 = static_cast<int>(net.W1.cols());
    const int D = static_cast<int>(X.rows());
    if (net.b1.size() != m || net.W2.rows() != 1 || net.W2.cols() != m) fail(ErrorCode::Validation, "net shapes disagree");
    if (X.cols() != n0 || y.size() != D || D < 1 || T < 1) fail(ErrorCode::Validation, "dataset shape disagrees with the net");
    const int k = std::max(n0, m);
    RegistryOptions o;
    o.d = std::max({4, k});
    TwoLayerNet fin = sgd_nn_oracle(net, X, y, eta, T);
    o.entry_bound = std::max({2.0, frob_bound(X), y.cwiseAbs().maxCoeff() + 2.0, frob_bound(net.W1) * 2.0,
                              frob_bound(net.W2) * 2.0, frob_bound(fin.W1) * 2.0, frob_bound(fin.W2) * 2.0});
    {
        double prod = 1.0;
        TwoLayerNet w = net;
        auto seen = [&](const Matrix& v) { prod = std::max(prod, frob_bound(v)); };
        for (int t = 0; t < T; ++t)
            for (int i = 0; i < D; ++i) {
                Vector x = X.row(i).transpose();
                Vector u = w.W1 * x;
                Vector h = (u + w.b1).unaryExpr([](double v) { return sigmoid(v); });
                Matrix o1 = w.W2 * h;
                seen(u);
                seen(o1);
                auto g = backprop_oracle(w, x, y(i));
                seen(Matrix::Constant(1, 1, g.db2));
                seen(g.dW2);
                seen(w.W2 * g.db2);
                seen(g.dW1);
                seen(eta * g.dW1);
                w = sgd_step(w, g, eta);
            }
        o.product_bound = 2.0 * prod;
    }
    o.eps = 1e-3 / (T * D * (40.0 + 6.0 * m)) / 4.0;
    Emitter e(o.d);
    e.matrix("W1T", net.W1.transpose());
    e.matrix("b1", Matrix(net.b1));
    e.matrix("W2c", net.W2.transpose());
    e.mem("b2", net.b2);
    for (int i = 0; i < D; ++i) e.matrix("x" + std::to_string(i), Matrix(X.row(i).transpose()));
    for (int i = 0; i < D; ++i) e.mem("y" + std::to_string(i), y(i));
    e.matrix("etaI", eta * Matrix::Identity(k, k));
    e.matrix("ones", Matrix::Ones(1, m));
    Matrix sel = Matrix::Zero(2, 1);
    sel(1, 0) = 1.0;
    e.matrix("sel", sel);
    e.mem("one", 1.0);
    e.mem("te", -(T - 1));
    e.mem("ti", -(D - 1));
    e.mem("tiinit", -(D - 1));
    e.mem("tk", -(m - 1));
    e.mem("tkinit", -(m - 1));
    e.var("d1r", 1, m);
    e.var("qi", 1, 1);
    // forward
    e.label("Lu");
    e.mul("u", "W1T", "x0");
    e.add("z", "u", "b1");
    e.transp("zr", "z");
    e.sigmoid("hr", "sel", "zr");
    e.transp("hc", "hr");
    e.mul("o1", "W2c", "hc");
    e.add("o", "o1", "b2");
    // deltas
    e.label("Ld");
    e.sub("d2", "o", "y0");
    e.mul("gW2", "hr", "d2");
    e.transp("W2r", "W2c");
    e.mul("vr", "d2", "W2r");
    e.sub("omh", "ones", "hr");
    // d1_i = h_i (1 - h_i) v_i, walking the row vectors with pointers
    e.label("E1");
    e.call("qi", "mul", "hr", "omh", 1, 1);
    e.label("E2");
    e.call("d1r", "mul", "qi", "vr", 1, 1);
    e.call("E1", "incr_ab", "E1", "b0", 1, 1);
    e.call("E2", "incr_bc", "E2", "b0", 1, 1);
    e.count("tk", "E1");
    e.add("tk", "tkinit", "a0");
    e.call("E1", "reset", "b0", "TE1", 1, 1);
    e.call("E2", "reset", "b0", "TE2", 1, 1);
    e.transp("d1c", "d1r");
    e.label("Lx");
    e.transp("xr", "x0");
    e.mul("gW1T", "xr", "d1r");
    // updates
    e.mul("s1", "etaI", "gW1T", n0);
    e.sub("W1T", "W1T", "s1");
    e.mul("s2", "etaI", "d1c", m);
    e.sub("b1", "b1", "s2");
    e.mul("s3", "etaI", "gW2", m);
    e.sub("W2c", "W2c", "s3");
    e.mul("s4", "etaI", "d2", 1);
    e.sub("b2", "b2", "s4");
    if (wrap) {
        e.call("Lu", "incr_b", "Lu", "b0", 1, 1);
        e.call("Ld", "incr_b", "Ld", "b0", 1, 1);
        e.call("Lx", "incr_a", "Lx", "b0", 1, 1);
        e.count("ti", "Lu");
        e.add("ti", "tiinit", "a0");
        e.call("Lu", "reset", "b0", "TU", 1, 1);
        e.call("Ld", "reset", "b0", "TD", 1, 1);
        e.call("Lx", "reset", "b0", "TX", 1, 1);
        e.count("te", "Lu");
    }
    e.halt();
    std::vector<std::pair<std::string, std::string>> copies{{"E1", "TE1"}, {"E2", "TE2"}};
    if (wrap) copies.insert(copies.end(), {{"Lu", "TU"}, {"Ld", "TD"}, {"Lx", "TX"}});
    auto spec = spec_of("nn", o, o.d);
    auto reg = make_registry(spec);
    auto t = make(wrap ? "sgd_nn" : "backprop", spec, reg, with_copies(e.text(), reg, copies));
    t.outputs = {"W1T", "b1", "W2c", "b2"};
    t.oracle["W1T"] = fin.W1.transpose();
    t.oracle["b1"] = Matrix(fin.b1);
    t.oracle["W2c"] = fin.W2.transpose();
    t.oracle["b2"] = Matrix::Constant(1, 1, fin.b2);
    finish_template(t);
    return t;
}

}  // namespace

ProgramTemplate program_backprop(const TwoLayerNet& net, const Vector& x, double y, double eta) {
    Matrix X = x.transpose();
    Vector Y = Vector::Constant(1, y);
    return emit_nn(net, X, Y, eta, 1, false);
}

ProgramTemplate program_sgd_nn(const TwoLayerNet& net, const Matrix& X, const Vector& y, double eta, int T) {
    return emit_nn(net, X, y, eta, T, true);
}

std::vector<std::string> template_names() {
    return {"calculator", "inverse", "power", "sgd_linear", "backprop", "sgd_nn"};
}

ProgramTemplate example_template(const std::string& name, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    auto rnd = [&](int r, int c, double s) {
        Matrix m(r, c);
        for (int i = 0; i < m.size(); ++i) m.data()[i] = s * u(rng);
        return m;
    };
    auto net = [&]() {
        TwoLayerNet n;
        if (seed == 0) {
            n.W1 = Matrix(2, 2);
            n.W1 << 0.3, -0.2, 0.1, 0.4;
            n.b1 = Vector(2);
            n.b1 << 0.05, -0.1;
            n.W2 = Matrix(1, 2);
            n.W2 << 0.5, -0.3;
            n.b2 = 0.1;
        } else {
            n.W1 = rnd(2, 2, 0.5);
            n.b1 = rnd(2, 1, 0.2);
            n.W2 = rnd(1, 2, 0.5);
            n.b2 = 0.2 * u(rng);
        }
        return n;
    };
    if (name == "calculator") {
        if (seed == 0) return program_calculator(5, 4, 8, 1);
        // a + b - c in [0.2, 2], d in [1, 4]
        std::uniform_real_distribution<double> abc(0.0, 3.0), s(0.2, 2.0), dd(1.0, 4.0);
        double a = abc(rng), b = abc(rng), x = s(rng), d = dd(rng);
        return program_calculator(a, b, a + b - x, d);
    }
    if (name == "inverse") {
        Matrix A = Matrix::Zero(2, 2);
        A(0, 0) = 1;
        A(1, 1) = 2;
        if (seed != 0) {
            Matrix Q = Eigen::HouseholderQR<Eigen::MatrixXd>(rnd(3, 3, 1.0)).householderQ();
            std::uniform_real_distribution<double> ev(1.0, 3.0);
            Vector l(3);
            for (int i = 0; i < 3; ++i) l(i) = ev(rng);
            A = Q * l.asDiagonal() * Q.transpose();
        }
        return program_matrix_inverse(A, 8, 1.0 / A.squaredNorm());
    }
    if (name == "power") {
        Matrix A = Matrix::Zero(2, 2);
        A(0, 0) = 3;
        A(1, 1) = 1;
        if (seed != 0) {
            Matrix Q = Eigen::HouseholderQR<Eigen::MatrixXd>(rnd(4, 4, 1.0)).householderQ();
            Vector l(4);
            l(0) = 2.0 + 0.5 * (u(rng) + 1.0);
            for (int i = 1; i < 4; ++i) l(i) = 1.0 * u(rng);
            A = Q * l.asDiagonal() * Q.transpose();
        }
        return program_power_iteration(A, 0, 6);
    }
    if (name == "sgd_linear") {
        Matrix X = rnd(3, 2, 1.0);
        Vector y = rnd(3, 1, 1.0);
        return program_sgd_linear(X, y, 0.3, 2);
    }
    if (name == "backprop") {
        auto n = net();
        Vector x = seed == 0 ? Vector(Vector::Zero(2)) : Vector(rnd(2, 1, 1.0));
        if (seed == 0) x << 1.0, 0.5;
        return program_backprop(n, x, 1.0, 0.5);
    }
    if (name == "sgd_nn") {
        auto n = net();
        Matrix X = rnd(2, 2, 1.0);
        Vector y = rnd(2, 1, 1.0);
        return program_sgd_nn(n, X, y, 0.5, 2);
    }
    fail(ErrorCode::Validation, "unknown program '" + name + "'");
}

}  // namespace lf
