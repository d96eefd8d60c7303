#include "loopformer.h"

#include "loopformer/blocks.hpp"
#include "loopformer/programs.hpp"
#include "loopformer/serialize.hpp"
#include "loopformer/subleq.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

using namespace lf;

struct lf_program {
    lf_kind kind = LF_SUBLEQ;
    // SUBLEQ
    SubleqProgram sl;
    int n_bits = 16;
    // FLEQ
    RegistrySpec spec;
    FunctionRegistry reg;
    FleqProgram fl;
    double eps_total = 1e-3;
    std::optional<ProgramTemplate> tmpl;
};

struct lf_run {
    lf_kind kind = LF_SUBLEQ;
    FleqProgram fl;  // for variable names in dumps
    MachineTrace sl_trace, sl_ref;
    FleqTrace fl_trace, fl_ref;
    std::vector<double> deviation, allowed;
    bool compared = false;
    bool control_match = true;
    double max_deviation = 0.0;
    double bound = 0.0;
    double lambda = 0.0;
    int cycles = 0;
    bool halted = false;
};

namespace {

thread_local std::string g_error;

lf_status status_of(ErrorCode c) {
    switch (c) {
        case ErrorCode::Ok: return LF_OK;
        case ErrorCode::Parse: return LF_ERR_PARSE;
        case ErrorCode::Validation: return LF_ERR_VALIDATION;
        case ErrorCode::Deviation: return LF_ERR_DEVIATION;
        case ErrorCode::Numeric: return LF_ERR_NUMERIC;
        case ErrorCode::Internal: return LF_ERR_INTERNAL;
    }
    return LF_ERR_INTERNAL;
}

lf_status set_error(lf_status s, const std::string& msg) {
    g_error = msg;
    return s;
}

template <class F>
lf_status guard(F&& f) {
    try {
        g_error.clear();
        return f();
    } catch (const Error& e) {
        return set_error(status_of(e.code()), e.what());
    } catch (const std::bad_alloc&) {
        return set_error(LF_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return set_error(LF_ERR_INTERNAL, e.what());
    }
}

char* copy_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

constexpr int kMaxCycles = 200000;

int subleq_cycles(const lf_program& p, int requested) {
    if (requested > 0) return requested;
    // the reference keeps stepping the EOF self-loop, so look for the first arrival
    for (int budget = 256;; budget *= 4) {
        budget = std::min(budget, kMaxCycles);
        auto ref = run_subleq_reference(p.sl, budget, {p.n_bits});
        for (size_t t = 0; t < ref.states.size(); ++t)
            if (ref.states[t].pc == p.sl.eof_index()) return std::max(static_cast<int>(t), 1);
        if (budget == kMaxCycles)
            fail(ErrorCode::Validation, "program does not halt within " + std::to_string(kMaxCycles) + " steps; pass a cycle count");
    }
}

int fleq_cycles(const lf_program& p, int requested) {
    if (requested > 0) return requested;
    if (p.tmpl) return p.tmpl->cycles;
    FleqState st;
    st.data = p.fl.data;
    st.code = p.fl.code;
    int k = 0;
    while (st.pc != p.fl.eof()) {
        if (k >= kMaxCycles) fail(ErrorCode::Validation, "program does not reach EOF within " + std::to_string(kMaxCycles) + " steps; pass a cycle count");
        st = fleq_step(p.fl, p.reg, st);
        ++k;
    }
    return std::max(k, 1);
}

void run_subleq(const lf_program& p, const lf_run_config& cfg, lf_run& r) {
    const int T = subleq_cycles(p, cfg.cycles);
    const double eps = cfg.eps > 0 ? cfg.eps : 0.25;
    SoftmaxMode mode = SoftmaxMode::hardmax();
    auto mc = subleq_machine(p.sl, p.n_bits);
    if (cfg.mode == LF_SOFTMAX) {
        r.lambda = cfg.lambda > 0 ? cfg.lambda : subleq_auto_lambda(mc, eps);
        mode = SoftmaxMode::softmax(r.lambda);
        r.bound = appb_bound(1.0, mc.layout.rows.width(), p.sl.n(), r.lambda);
    }
    SubleqRunOptions o;
    o.compare_hardmax = cfg.compare != 0;
    auto rep = run_subleq_transformer(p.sl, p.n_bits, T, mode, o);
    r.sl_trace = rep.trace;
    r.cycles = T;
    r.halted = rep.trace.halted;
    r.deviation = rep.per_cycle_deviation;
    r.max_deviation = rep.max_precorrection_deviation;
    r.allowed.assign(r.deviation.size(), r.bound);
    if (cfg.compare) {
        r.compared = true;
        ReferenceOptions ro;
        ro.n_bits = p.n_bits;
        r.sl_ref = run_subleq_reference(p.sl, T, ro);
        // the reference stops at EOF; the machine idles there
        for (size_t t = 0; t < r.sl_trace.states.size(); ++t) {
            const auto& want = r.sl_ref.states[std::min(t, r.sl_ref.states.size() - 1)];
            const auto& got = r.sl_trace.states[t];
            if (got.pc != want.pc || got.memory != want.memory) r.control_match = false;
        }
    }
}

void run_fleq_program(const lf_program& p, const lf_run_config& cfg, lf_run& r) {
    const int T = fleq_cycles(p, cfg.cycles);
    const double eps_total = cfg.eps > 0 ? cfg.eps : p.eps_total;
    FleqSchedule sch{eps_total, T};
    SoftmaxMode mode = SoftmaxMode::hardmax();
    if (cfg.mode == LF_SOFTMAX) {
        auto mc = fleq_machine(p.fl, p.reg);
        r.lambda = cfg.lambda > 0 ? cfg.lambda : fleq_auto_lambda(mc, sch.eps_cycle());
        mode = SoftmaxMode::softmax(r.lambda);
    }
    FleqRunOptions o;
    o.compare_reference = cfg.compare != 0;
    auto rep = run_fleq(p.fl, p.reg, T, mode, o);
    r.fl = p.fl;
    r.fl_trace = rep.trace;
    r.fl_ref = rep.reference;
    r.cycles = T;
    r.halted = rep.trace.halted;
    r.compared = cfg.compare != 0;
    r.deviation = rep.deviation;
    r.max_deviation = rep.max_deviation;
    r.control_match = rep.control_match;
    r.bound = eps_total;
    for (size_t t = 0; t < r.deviation.size(); ++t) r.allowed.push_back((t + 1) * sch.eps_cycle());
}

bool within(const lf_run& r) {
    if (!r.control_match) return false;
    for (size_t t = 0; t < r.deviation.size(); ++t)
        if (!(r.deviation[t] <= r.allowed[t])) return false;
    return true;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::vector<double> points(double lo, double hi, int steps, bool log_space) {
    std::vector<double> v;
    for (int i = 0; i < steps; ++i) {
        const double f = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        v.push_back(log_space ? lo * std::pow(hi / lo, f) : lo + f * (hi - lo));
    }
    return v;
}

std::string sweep_lambda(const lf_program& p, const std::vector<double>& lams) {
    std::ostringstream out;
    if (p.kind == LF_SUBLEQ) {
        out << "lambda,deviation,bound,trace_match\n";
        for (double lam : lams) {
            lf_run r;
            lf_run_config cfg{LF_SOFTMAX, lam, 0.25, 0, 1};
            run_subleq(p, cfg, r);
            out << fmt(lam) << "," << fmt(r.max_deviation) << "," << fmt(r.bound) << "," << (r.control_match ? 1 : 0) << "\n";
        }
        lf_run h;
        lf_run_config cfg{LF_HARDMAX, 0, 0.25, 0, 1};
        run_subleq(p, cfg, h);
        out << "inf,0,0," << (h.control_match ? 1 : 0) << "\n";
    } else {
        out << "lambda,deviation,bound,control_match\n";
        for (double lam : lams) {
            lf_run r;
            lf_run_config cfg{LF_SOFTMAX, lam, 0, 0, 1};
            run_fleq_program(p, cfg, r);
            out << fmt(lam) << "," << fmt(r.max_deviation) << "," << fmt(r.bound) << "," << (r.control_match ? 1 : 0) << "\n";
        }
        lf_run h;
        lf_run_config cfg{LF_HARDMAX, 0, 0, 0, 1};
        run_fleq_program(p, cfg, h);
        out << "inf," << fmt(h.max_deviation) << "," << fmt(h.bound) << "," << (h.control_match ? 1 : 0) << "\n";
    }
    return out.str();
}

std::string sweep_matmul(int d, bool vary_c, const std::vector<double>& vals, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<std::pair<Matrix, Matrix>> pairs;
    for (int k = 0; k < 10; ++k) {
        Matrix A(d, d), B(d, d);
        for (int i = 0; i < A.size(); ++i) A.data()[i] = u(rng);
        for (int i = 0; i < B.size(); ++i) B.data()[i] = u(rng);
        pairs.push_back({A, B});
    }
    const auto base = auto_matmul_constants(1e-3, d, 1.0, 2 * d);
    std::ostringstream out;
    out << (vary_c ? "c" : "C") << ",max_error\n";
    for (double v : vals) {
        MatmulConstants k = base;
        (vary_c ? k.c : k.C) = v;
        auto b = build_block(matmul_block_fixed(MatmulVariant::AtB, k), d, 4 * d);
        double err = 0.0;
        for (const auto& [A, B] : pairs)
            err = std::max(err, (b.run(A, B, SoftmaxMode::hardmax()) - A.transpose() * B).cwiseAbs().maxCoeff());
        out << fmt(v) << "," << fmt(err) << "\n";
    }
    return out.str();
}

#define LF_CHECK_ARG(cond, msg) \
    if (!(cond)) return set_error(LF_ERR_ARGUMENT, msg)

}  // namespace

extern "C" {

const char* lf_version(void) { return "0.1.0"; }

const char* lf_last_error(void) { return g_error.c_str(); }

void lf_string_free(char* s) { std::free(s); }

void lf_run_config_init(lf_run_config* cfg) {
    if (!cfg) return;
    *cfg = lf_run_config{LF_HARDMAX, 0.0, 0.0, 0, 1};
}

lf_status lf_program_parse(lf_kind kind, const char* text, int n_bits, lf_program** out) {
    LF_CHECK_ARG(text && out, "null argument");
    LF_CHECK_ARG(kind == LF_SUBLEQ || kind == LF_FLEQ, "unknown program kind");
    *out = nullptr;
    return guard([&] {
        auto p = std::make_unique<lf_program>();
        p->kind = kind;
        if (kind == LF_SUBLEQ) {
            if (n_bits < 2 || n_bits > 62) fail(ErrorCode::Validation, "n_bits must be in [2, 62]");
            p->n_bits = n_bits;
            p->sl = parse_subleq(text);
            p->sl.validate(n_bits);
        } else {
            p->spec = registry_spec_from_source(text);
            p->reg = make_registry(p->spec);
            p->fl = parse_fleq(text, p->reg);
            if (p->spec.tolerance > 0) p->eps_total = p->spec.tolerance;
        }
        *out = p.release();
        return LF_OK;
    });
}

lf_status lf_program_template(const char* name, uint64_t seed, lf_program** out) {
    LF_CHECK_ARG(name && out, "null argument");
    *out = nullptr;
    return guard([&] {
        auto p = std::make_unique<lf_program>();
        p->kind = LF_FLEQ;
        p->tmpl = example_template(name, seed);
        p->spec = p->tmpl->spec;
        p->reg = p->tmpl->registry;
        p->fl = p->tmpl->program;
        p->eps_total = p->tmpl->eps_total;
        *out = p.release();
        return LF_OK;
    });
}

void lf_program_free(lf_program* p) { delete p; }

lf_kind lf_program_kind(const lf_program* p) { return p ? p->kind : LF_SUBLEQ; }

lf_status lf_program_source(const lf_program* p, char** text) {
    LF_CHECK_ARG(p && text, "null argument");
    return guard([&] {
        if (p->kind == LF_SUBLEQ) *text = copy_string(format_subleq(p->sl));
        else if (p->tmpl) *text = copy_string(p->tmpl->source);
        else *text = copy_string(registry_directive(p->spec) + format_fleq(p->fl, p->reg));
        return LF_OK;
    });
}

lf_status lf_program_shape(const lf_program* p, int* layers, int* heads, int* width, int* columns) {
    LF_CHECK_ARG(p, "null argument");
    return guard([&] {
        int l, h, w, n;
        if (p->kind == LF_SUBLEQ) {
            auto mc = subleq_machine(p->sl, p->n_bits);
            auto st = build_subleq_transformer(mc);
            l = st.num_layers();
            h = st.max_heads();
            w = mc.layout.rows.width();
            n = mc.layout.n;
        } else {
            auto mc = fleq_machine(p->fl, p->reg);
            auto st = build_fleq_transformer(mc);
            l = st.num_layers();
            h = st.max_heads();
            w = mc.layout.rows.width();
            n = mc.layout.n;
        }
        if (layers) *layers = l;
        if (heads) *heads = h;
        if (width) *width = w;
        if (columns) *columns = n;
        return LF_OK;
    });
}

lf_status lf_program_assemble_json(const lf_program* p, char** json) {
    LF_CHECK_ARG(p && json, "null argument");
    return guard([&] {
        Json j;
        if (p->kind == LF_SUBLEQ) {
            TapeLayout l;
            Matrix x = assemble_subleq(p->sl, p->n_bits, &l);
            j = {{"kind", "subleq"}, {"n_bits", p->n_bits}, {"program", to_json(p->sl)}, {"layout", to_json(l)}, {"tape", to_json(x)}};
        } else {
            auto mc = fleq_machine(p->fl, p->reg);
            Matrix x = assemble_fleq(p->fl, mc);
            Json blocks = Json::array();
            for (const auto& b : mc.blocks) blocks.push_back({{"name", b.name}, {"layers", b.l()}, {"heads", b.h()}, {"rows", b.r()}, {"scratch", b.s}});
            j = {{"kind", "fleq"},          {"registry", p->spec.name}, {"program", to_json(p->fl)},
                 {"blocks", blocks},        {"layout", to_json(mc.layout)}, {"tape", to_json(x)}};
        }
        *json = copy_string(dump(j));
        return LF_OK;
    });
}

lf_status lf_program_oracle_json(const lf_program* p, char** json) {
    LF_CHECK_ARG(p && json, "null argument");
    return guard([&] {
        Json j;
        if (p->kind == LF_SUBLEQ) {
            ReferenceOptions ro;
            ro.n_bits = p->n_bits;
            j = {{"kind", "subleq"}, {"reference", to_json(run_subleq_reference(p->sl, subleq_cycles(*p, 0), ro))}};
        } else if (p->tmpl) {
            j = oracle_json(*p->tmpl);
        } else {
            j = {{"kind", "fleq"}, {"reference", to_json(p->fl, run_fleq_reference(p->fl, p->reg, fleq_cycles(*p, 0)))}};
        }
        *json = copy_string(dump(j));
        return LF_OK;
    });
}

lf_status lf_run_program(const lf_program* p, const lf_run_config* cfg, lf_run** out) {
    LF_CHECK_ARG(p && out, "null argument");
    *out = nullptr;
    lf_run_config c;
    lf_run_config_init(&c);
    if (cfg) c = *cfg;
    LF_CHECK_ARG(c.mode == LF_HARDMAX || c.mode == LF_SOFTMAX, "unknown mode");
    LF_CHECK_ARG(std::isfinite(c.lambda) && std::isfinite(c.eps), "lambda and eps must be finite");
    return guard([&] {
        auto r = std::make_unique<lf_run>();
        r->kind = p->kind;
        if (p->kind == LF_SUBLEQ) run_subleq(*p, c, *r);
        else run_fleq_program(*p, c, *r);
        const bool ok = !r->compared || within(*r);
        *out = r.release();
        if (!ok) {
            std::ostringstream m;
            m << "run left its tolerance: max deviation " << (*out)->max_deviation << ", control "
              << ((*out)->control_match ? "matches" : "differs");
            return set_error(LF_ERR_DEVIATION, m.str());
        }
        return LF_OK;
    });
}

void lf_run_free(lf_run* r) { delete r; }
int lf_run_cycles(const lf_run* r) { return r ? r->cycles : 0; }
int lf_run_halted(const lf_run* r) { return r && r->halted ? 1 : 0; }
int lf_run_control_match(const lf_run* r) { return r && r->control_match ? 1 : 0; }
double lf_run_max_deviation(const lf_run* r) { return r ? r->max_deviation : 0.0; }
double lf_run_bound(const lf_run* r) { return r ? r->bound : 0.0; }
double lf_run_lambda(const lf_run* r) { return r ? r->lambda : 0.0; }

lf_status lf_run_trace_json(const lf_run* r, char** json) {
    LF_CHECK_ARG(r && json, "null argument");
    return guard([&] {
        Json j = r->kind == LF_SUBLEQ ? to_json(r->sl_trace) : to_json(r->fl, r->fl_trace);
        *json = copy_string(dump(j));
        return LF_OK;
    });
}

lf_status lf_run_diff_json(const lf_run* r, char** json) {
    LF_CHECK_ARG(r && json, "null argument");
    return guard([&] {
        int first = -1;
        if (r->compared) {
            if (r->kind == LF_SUBLEQ) {
                for (size_t t = 0; t < r->sl_trace.states.size() && first < 0; ++t) {
                    const auto& want = r->sl_ref.states[std::min(t, r->sl_ref.states.size() - 1)];
                    const auto& got = r->sl_trace.states[t];
                    if (got.pc != want.pc || got.memory != want.memory) first = static_cast<int>(t);
                }
            } else {
                for (size_t t = 0; t < r->deviation.size() && first < 0; ++t)
                    if (!(r->deviation[t] <= r->allowed[t])) first = static_cast<int>(t) + 1;
                for (size_t t = 0; t < r->fl_trace.states.size() && t < r->fl_ref.states.size(); ++t) {
                    const auto& a = r->fl_trace.states[t];
                    const auto& b = r->fl_ref.states[t];
                    if ((a.pc != b.pc || a.code != b.code) && (first < 0 || static_cast<int>(t) < first)) {
                        first = static_cast<int>(t);
                        break;
                    }
                }
            }
        }
        Json j = {{"compared", r->compared},
                  {"cycles", r->cycles},
                  {"lambda", r->lambda},
                  {"control_match", r->control_match},
                  {"max_deviation", r->max_deviation},
                  {"bound", r->bound},
                  {"first_mismatch", first},
                  {"deviation", r->deviation},
                  {"allowed", r->allowed}};
        *json = copy_string(dump(j));
        return LF_OK;
    });
}

lf_status lf_sweep(const lf_program* p, const char* param, double lo, double hi, int steps, uint64_t seed, char** csv) {
    LF_CHECK_ARG(param && csv, "null argument");
    LF_CHECK_ARG(steps >= 1 && steps <= 10000, "steps must be in [1, 10000]");
    LF_CHECK_ARG(std::isfinite(lo) && std::isfinite(hi) && lo > 0 && hi > 0, "range must be positive and finite");
    const std::string what = param;
    return guard([&] {
        if (what == "lambda") {
            if (!p) fail(ErrorCode::Validation, "a lambda sweep needs a program");
            *csv = copy_string(sweep_lambda(*p, points(lo, hi, steps, false)));
        } else if (what == "c" || what == "C") {
            const int d = p && p->kind == LF_FLEQ ? p->reg.d : 4;
            *csv = copy_string(sweep_matmul(d, what == "c", points(lo, hi, steps, what == "c"), seed));
        } else {
            fail(ErrorCode::Validation, "unknown sweep parameter '" + what + "' (lambda, c, C)");
        }
        return LF_OK;
    });
}

}  // extern "C"
