#include "loopformer/blocks.hpp"

#include "loopformer/encodings.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace lf {

int FunctionBlock::h() const {
    int m = 0;
    for (const auto& l : layers) m = std::max(m, static_cast<int>(l.heads.size()));
    return m;
}

Matrix FunctionBlock::tape(const Matrix& A, const Matrix& B) const {
    const int h = data_height();
    if (A.rows() > h || B.rows() > h || A.cols() > d || B.cols() > d)
        fail(ErrorCode::Validation, name + ": operand larger than " + std::to_string(h) + "x" + std::to_string(d));
    Matrix x = templ;
    x.block(0, 0, A.rows(), A.cols()) = A;
    x.block(0, d, B.rows(), B.cols()) = B;
    return x;
}

Matrix FunctionBlock::output(const Matrix& x) const { return x.block(0, 2 * d, data_height(), d); }

Matrix FunctionBlock::run(const Matrix& A, const Matrix& B, SoftmaxMode mode) const {
    TransformerStack st(r(), layers);
    return output(st.forward(tape(A, B), mode));
}

void FunctionBlock::check_inert() const {
    for (const auto& l : layers) {
        if (l.ffn.b1.size() && l.ffn.b1.maxCoeff() > 0.0) fail(ErrorCode::Internal, name + ": positive b1 in " + l.name);
        if (l.ffn.b2.size() && l.ffn.b2.cwiseAbs().maxCoeff() != 0.0)
            fail(ErrorCode::Internal, name + ": nonzero b2 in " + l.name);
    }
}

namespace {

// Code for a local column index with a leading constant bit, so a match scores
// Lc, a mismatch at most Lc - 2 and a zero key 0.
std::vector<int> loc_code(int j, int d) {
    std::vector<int> v{1};
    auto c = encode_position(j, std::max(d, 2));
    v.insert(v.end(), c.bits.begin(), c.bits.end());
    return v;
}
int loc_len(int d) { return code_length(std::max(d, 2)) + 1; }

// Assembles a block: structure rows carry a per-column generator for the template.
class Sketch {
public:
    Sketch(const BlockContext& cx, const std::string& name, BlockKind kind, int data_h, int min_s) : cx_(cx) {
        b.name = name;
        b.kind = kind;
        b.d = cx.d;
        b.s = cx.s ? cx.s : min_s;
        if (b.s < min_s)
            fail(ErrorCode::Validation, name + " needs scratch width " + std::to_string(min_s) + ", got " +
                                            std::to_string(b.s));
        b.n_total = cx.n_total ? cx.n_total : b.s;
        if (b.n_total < b.s) fail(ErrorCode::Validation, name + ": n_total below scratch width");
        b.rows.add("DATA", data_h);
        d = b.d;
        s = b.s;
        structure("ONE", 1, [](int, int) { return 1.0; });
    }

    void structure(const std::string& n, int h, std::function<double(int, int)> gen) {
        b.rows.add(n, h);
        b.structure.push_back(n);
        gens_.emplace_back(n, std::move(gen));
    }
    void work(const std::string& n, int h) { b.rows.add(n, h); }

    // Indicator of column range [lo, hi).
    void section(const std::string& n, int lo, int hi) {
        structure(n, 1, [lo, hi](int, int c) { return c >= lo && c < hi ? 1.0 : 0.0; });
    }
    // Local code of (c - lo) on columns [lo, lo + cnt).
    void locs(const std::string& n, int lo, int cnt) {
        const int dd = d;
        structure(n, loc_len(d), [lo, cnt, dd](int i, int c) {
            if (c < lo || c >= lo + cnt) return 0.0;
            return static_cast<double>(loc_code(c - lo, dd)[i]);
        });
    }

    int row(const std::string& n, int i = 0) const { return b.rows.row(n, i); }
    Lin R(const std::string& n, int i = 0) const { return Lin::row(row(n, i)); }
    int H(const std::string& n) const { return b.rows.height(n); }
    int width() const { return b.rows.width(); }

    // Key block on one section matched against the query block on another.
    void match(HeadBuilder& hb, const std::string& key, const std::string& query, double scale = 1.0) const {
        for (int i = 0; i < H(key); ++i) hb.score(R(key, i), scale * R(query, i));
    }
    void move(HeadBuilder& hb, const std::string& from, const std::string& to, int count = -1, double w = 1.0) const {
        if (count < 0) count = H(from);
        for (int i = 0; i < count; ++i) hb.value(row(to, i), row(from, i), w);
    }

    void layer(const std::string& lname, std::vector<AttentionHead> heads, FFNBuilder* f) {
        TransformerLayer l;
        l.name = b.name + ": " + lname;
        l.heads = std::move(heads);
        l.ffn = f ? f->build() : FFNBuilder(width()).build();
        b.layers.push_back(std::move(l));
    }

    FunctionBlock finish() {
        const int w = width();
        for (auto& l : b.layers) {
            // layers built before later rows were declared are widened here
            if (l.width() != w) {
                std::vector<int> map(l.width());
                for (int i = 0; i < l.width(); ++i) map[i] = i;
                l = embed_layer(l, w, map);
            }
        }
        b.templ = Matrix::Zero(w, s);
        for (auto& [n, g] : gens_)
            for (int i = 0; i < H(n); ++i)
                for (int c = 0; c < s; ++c) b.templ(row(n, i), c) = g(i, c);
        b.check_inert();
        return std::move(b);
    }

    FunctionBlock b;
    int d = 0, s = 0;
    double Gv() const { return 4.0 * (cx_.value_bound + 1.0); }
    const BlockContext& cx() const { return cx_; }

private:
    BlockContext cx_;
    std::vector<std::pair<std::string, std::function<double(int, int)>>> gens_;
};

// DATA at C columns += coef * src (src zero or garbage elsewhere), then clear src.
void land(FFNBuilder& f, const Sketch& k, const std::string& src, double coef, int count = -1) {
    if (count < 0) count = k.H(src);
    for (int i = 0; i < count; ++i) f.gated(coef * k.R(src, i), k.R("ONE") - k.R("SC"), k.row("DATA", i), 1.0, k.Gv());
    f.clear_block(k.b.rows, src);
}

// Zero a workspace block outside the columns where `keep` is 1.
void keep_only(FFNBuilder& f, const Sketch& k, const std::string& blk, const std::string& keep, double G) {
    for (int i = 0; i < k.H(blk); ++i) f.gated(k.R(blk, i), k.R(keep), k.row(blk, i), -1.0, G);
}

FunctionBlock make_add_sub(const BlockContext& cx, bool sub) {
    const int d = cx.d;
    Sketch k(cx, sub ? "sub" : "add", BlockKind::Data, d, 3 * d);
    k.section("SB", d, 2 * d);
    k.section("SC", 2 * d, 3 * d);
    k.structure("LOCAB", loc_len(d), [d](int i, int c) {
        if (c >= 2 * d) return 0.0;
        return static_cast<double>(loc_code(c % d, d)[i]);
    });
    k.locs("LOCC", 2 * d, d);
    k.work("ACC", d);
    auto negate_b = [&](const std::string& nm) {
        FFNBuilder f(k.width());
        if (sub)
            for (int i = 0; i < d; ++i) f.gated(k.R("DATA", i), k.R("ONE") - k.R("SB"), k.row("DATA", i), -2.0, k.Gv());
        k.layer(nm, {}, &f);
    };
    negate_b(sub ? "negate B" : "pass");
    {
        HeadBuilder hb(k.width());
        k.match(hb, "LOCAB", "LOCC");
        k.move(hb, "DATA", "ACC");
        FFNBuilder f(k.width());
        land(f, k, "ACC", 2.0);
        k.layer("pair A_j and B_j into C_j", {hb.build()}, &f);
    }
    negate_b(sub ? "restore B" : "pass");
    return k.finish();
}

FunctionBlock make_transpose(const BlockContext& cx) {
    const int d = cx.d;
    const int w0 = 3 * d;
    Sketch k(cx, "transp", BlockKind::Data, d, 3 * d + d * d);
    auto ws = [w0, d](int c, int& i, int& j) {
        if (c < w0 || c >= w0 + d * d) return false;
        i = (c - w0) / d;
        j = (c - w0) % d;
        return true;
    };
    k.section("SC", 2 * d, 3 * d);
    k.section("WSP", w0, w0 + d * d);
    k.locs("LOCA", 0, d);
    k.locs("LOCC", 2 * d, d);
    k.structure("QF", loc_len(d), [&ws, d](int b, int c) {
        int i, j;
        return ws(c, i, j) ? static_cast<double>(loc_code(i, d)[b]) : 0.0;
    });
    k.structure("KG", loc_len(d), [&ws, d](int b, int c) {
        int i, j;
        return ws(c, i, j) ? static_cast<double>(loc_code(j, d)[b]) : 0.0;
    });
    k.structure("RSEL", d, [&ws](int r, int c) {
        int i, j;
        return ws(c, i, j) && i == r ? 1.0 : 0.0;
    });
    k.structure("CSEL", d, [&ws](int r, int c) {
        int i, j;
        return ws(c, i, j) && j == r ? 1.0 : 0.0;
    });
    k.work("WD", d);
    k.work("VEC", d);
    k.work("ACC", d);
    {
        HeadBuilder hb(k.width());
        k.match(hb, "LOCA", "QF");
        k.move(hb, "DATA", "WD");
        FFNBuilder f(k.width());
        keep_only(f, k, "WD", "WSP", k.Gv());
        k.layer("fan out A columns", {hb.build()}, &f);
    }
    {
        FFNBuilder f(k.width());
        // W(i,j) holds A column i; keep entry j in VEC row i
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                f.gated(k.R("WD", j), 2.0 * k.R("ONE") - k.R("RSEL", i) - k.R("CSEL", j), k.row("VEC", i), 1.0, k.Gv());
        f.clear_block(k.b.rows, "WD");
        k.layer("pick entries", {}, &f);
    }
    {
        HeadBuilder hb(k.width());
        k.match(hb, "KG", "LOCC");
        k.move(hb, "VEC", "ACC");
        FFNBuilder f(k.width());
        f.clear_block(k.b.rows, "VEC");
        k.layer("gather rows", {hb.build()}, &f);
    }
    {
        FFNBuilder f(k.width());
        land(f, k, "ACC", static_cast<double>(d));
        k.layer("scale into C", {}, &f);
    }
    return k.finish();
}

struct MatmulShape {
    int x_lo, y_lo;  // ID section (left factor) and query section (right factor)
};
MatmulShape matmul_shape(MatmulVariant v, int d) {
    switch (v) {
        case MatmulVariant::AtB: return {0, d};
        case MatmulVariant::BtA: return {d, 0};
        case MatmulVariant::AtA: return {0, 0};
        case MatmulVariant::BtB: return {d, d};
    }
    return {0, d};
}

FunctionBlock make_matmul(const BlockContext& cx, MatmulVariant v, std::optional<MatmulConstants> fixed, double eps,
                          double entry_bound, double perc, const std::string& name) {
    const int d = cx.d;
    Sketch k(cx, name, BlockKind::Data, d, 3 * d);
    const int n_anchor = k.s - 2 * d;
    const MatmulConstants mc = fixed ? *fixed : auto_matmul_constants(eps, d, entry_bound, n_anchor);
    const double D0 = n_anchor * std::exp(mc.C) + (k.b.n_total - n_anchor);
    const auto sh = matmul_shape(v, d);
    k.section("SY", sh.y_lo, sh.y_lo + d);
    k.section("SC", 2 * d, 3 * d);
    k.section("KONE", 2 * d, k.s);
    k.structure("ID", d, [sh](int i, int c) { return c == sh.x_lo + i ? 1.0 : 0.0; });
    k.locs("LOCY", sh.y_lo, d);
    k.locs("LOCC", 2 * d, d);
    if (perc != 0.0) k.structure("PB", 1, [perc, d](int, int c) { return c == d ? perc : 0.0; });
    k.work("ACC", d);
    k.work("XT", d);
    k.work("ACC2", d);
    {
        HeadBuilder hb(k.width());
        for (int r = 0; r < d; ++r) {
            Lin q = mc.c * k.R("DATA", r);
            if (r == 0 && perc != 0.0) q += mc.c * k.R("PB");
            hb.score(k.R("DATA", r), q);
        }
        hb.score(k.R("KONE"), mc.C * k.R("ONE"));
        for (int i = 0; i < d; ++i) hb.value(k.row("ACC", i), k.row("ID", i), D0);
        FFNBuilder f(k.width());
        // ACC is within c*G of ONE on every block column, so a unit gate suffices
        for (int i = 0; i < d; ++i)
            f.gated(k.R("ACC", i) - k.R("ONE"), k.R("ONE") - k.R("SY"), k.row("XT", i), 1.0 / mc.c, 1.0);
        f.clear_block(k.b.rows, "ACC");
        k.layer("linearized dot products", {hb.build(1.0)}, &f);
    }
    {
        HeadBuilder hb(k.width());
        k.match(hb, "LOCY", "LOCC");
        k.move(hb, "XT", "ACC2");
        FFNBuilder f(k.width());
        land(f, k, "ACC2", 1.0);
        f.clear_block(k.b.rows, "XT");
        k.layer("shift into C", {hb.build()}, &f);
    }
    return k.finish();
}

struct SigLayout {
    int N = 0, T = 0, m = 0;
    std::vector<int> fn;  // function of each term slot
    std::vector<SigmoidTerm> terms;
};

SigLayout sig_layout(const std::vector<SigmoidSum>& sums) {
    SigLayout L;
    L.N = static_cast<int>(sums.size());
    for (int f = 0; f < L.N; ++f) {
        L.m = std::max(L.m, static_cast<int>(sums[f].terms.size()));
        for (const auto& t : sums[f].terms) {
            L.fn.push_back(f);
            L.terms.push_back(t);
        }
    }
    L.T = static_cast<int>(L.terms.size());
    return L;
}

double score_span(const SigLayout& L, double xb) {
    double u = 0.0;
    for (const auto& t : L.terms) u = std::max(u, std::abs(t.a) * xb + std::abs(t.b));
    return u;
}

FunctionBlock make_sigmoid_wide(const BlockContext& cx, const std::vector<SigmoidSum>& sums,
                                const SigmoidBlockOptions& opt, const std::string& name) {
    const int d = cx.d;
    const auto L = sig_layout(sums);
    const int mo = opt.out_cols ? opt.out_cols : d;
    if (d < L.N + 1) fail(ErrorCode::Validation, name + ": selector needs d >= functions + 1");
    if (mo < 1 || mo > d) fail(ErrorCode::Validation, name + ": output columns must be in [1, d]");
    if (L.T == 0) fail(ErrorCode::Validation, name + ": no sigmoid terms");
    const int w0 = 3 * d, T = L.T;
    Sketch k(cx, name, BlockKind::Data, d, w0 + mo * T);
    const double n0 = static_cast<double>(k.b.n_total - mo * T);
    const double U = score_span(L, opt.input_bound);
    const double Csup = 2.0 * U + std::log(std::max(n0, 1.0)) + 50.0;
    const double Csel = Csup;
    k.section("SC", 2 * d, 3 * d);
    k.section("SA0", 0, 1);
    k.section("TERMIND", w0, w0 + mo * T);
    k.locs("LOCB", d, mo);
    k.locs("LOCC", 2 * d, mo);
    k.structure("TLOC", loc_len(d), [w0, T, mo, d](int b, int c) {
        if (c < w0 || c >= w0 + mo * T) return 0.0;
        return static_cast<double>(loc_code((c - w0) / T, d)[b]);
    });
    k.structure("TERM", mo * T, [w0](int q, int c) { return c == w0 + q ? 1.0 : 0.0; });
    k.structure("COEF", 1, [w0, T, mo, &L](int, int c) {
        if (c < w0 || c >= w0 + mo * T) return 0.0;
        return L.terms[(c - w0) % T].c;
    });
    k.work("RD", L.N + 1);
    k.work("SOUT", 1);
    k.work("ACC", 1);
    const int Lc = loc_len(d);
    {
        HeadBuilder hb(k.width());
        k.match(hb, "LOCB", "TLOC");
        hb.score(k.R("SA0"), Lc * k.R("TERMIND"));
        k.move(hb, "DATA", "RD", L.N + 1);
        FFNBuilder f(k.width());
        keep_only(f, k, "RD", "TERMIND", k.Gv());
        k.layer("read selector and input", {hb.build()}, &f);
    }
    {
        HeadBuilder hb(k.width());
        const Lin ti = k.R("TERMIND");
        for (int q = 0; q < mo * T; ++q) {
            const int kk = q % T;
            const auto& t = L.terms[kk];
            Lin Q = (2.0 * t.a) * k.R("RD", 0) + (t.b + std::log(n0)) * ti;
            Q += Csel * (2.0 * k.R("RD", 1 + L.fn[kk]) - ti);
            Q -= Csup * (ti - k.R("TERM", q));
            hb.score(k.R("TERM", q), Q);
        }
        hb.value(k.row("SOUT"), k.row("COEF"), 1.0);
        FFNBuilder f(k.width());
        keep_only(f, k, "SOUT", "TERMIND", k.Gv());
        f.clear_block(k.b.rows, "RD");
        k.layer("sigmoid terms", {hb.build(1.0)}, &f);
    }
    {
        HeadBuilder hb(k.width());
        k.match(hb, "TLOC", "LOCC");
        k.move(hb, "SOUT", "ACC");
        FFNBuilder f(k.width());
        land(f, k, "ACC", static_cast<double>(T));
        f.clear_block(k.b.rows, "SOUT");
        k.layer("sum terms into C", {hb.build()}, &f);
    }
    return k.finish();
}

FunctionBlock make_sigmoid_heads(const BlockContext& cx, const std::vector<SigmoidSum>& sums, const std::string& name) {
    const int d = cx.d;
    const auto L = sig_layout(sums);
    if (d < L.N + 1) fail(ErrorCode::Validation, name + ": selector needs d >= functions + 1");
    Sketch k(cx, name, BlockKind::Data, d, 3 * d);
    const double logn = std::log(static_cast<double>(k.b.n_total - 1));
    k.section("SA0", 0, 1);
    k.section("SB", d, 2 * d);
    k.section("SC", 2 * d, 3 * d);
    k.locs("LOCB", d, d);
    k.locs("LOCC", 2 * d, d);
    k.work("SEL", L.N);
    k.work("SOUT", 1);
    k.work("ACC", 1);
    {
        FFNBuilder f(k.width());
        for (int j = 0; j < L.N; ++j)
            f.gated(k.R("DATA", 1 + j), k.R("ONE") - k.R("SA0"), k.row("SEL", j), 1.0, k.Gv());
        k.layer("isolate selector", {}, &f);
    }
    {
        std::vector<AttentionHead> heads;
        for (int i = 0; i < L.m; ++i) {
            HeadBuilder hb(k.width());
            Lin ka, kb = logn * k.R("SA0");
            for (int j = 0; j < L.N; ++j) {
                if (i >= static_cast<int>(sums[j].terms.size())) continue;
                const auto& t = sums[j].terms[i];
                ka += t.a * k.R("SEL", j);
                kb += t.b * k.R("SEL", j);
                hb.value(k.row("SOUT"), k.row("SEL", j), t.c);
            }
            hb.score(ka, k.R("DATA", 0));
            hb.score(kb, k.R("SB"));
            heads.push_back(hb.build(1.0));
        }
        FFNBuilder f(k.width());
        keep_only(f, k, "SOUT", "SB", k.Gv());
        f.clear_block(k.b.rows, "SEL");
        k.layer("sigmoid heads", std::move(heads), &f);
    }
    {
        HeadBuilder hb(k.width());
        k.match(hb, "LOCB", "LOCC");
        k.move(hb, "SOUT", "ACC");
        FFNBuilder f(k.width());
        land(f, k, "ACC", 1.0);
        f.clear_block(k.b.rows, "SOUT");
        k.layer("shift into C", {hb.build()}, &f);
    }
    return k.finish();
}

FunctionBlock make_incr(const BlockContext& cx, const std::string& name, const std::vector<int>& fields, int delta) {
    const int d = cx.d;
    const int H = cx.ins.height(), Lb = cx.ins.L;
    Sketch k(cx, name, BlockKind::Pointer, H, 3 * d);
    k.section("SC", 2 * d, 3 * d);
    k.locs("LOCA", 0, d);
    k.locs("LOCC", 2 * d, d);
    k.work("ACC", H);
    HeadBuilder hb(k.width());
    k.match(hb, "LOCA", "LOCC");
    k.move(hb, "DATA", "ACC");
    FFNBuilder f(k.width());
    std::vector<bool> in_field(H, false);
    const double G = std::ldexp(1.0, Lb + 2) * (H + 4.0) + k.Gv();
    for (int off : fields) {
        AdderSpec sp;
        for (int i = 0; i < Lb; ++i) {
            in_field[off + i] = true;
            sp.x.push_back(k.R("ACC", off + i));
            sp.out_rows.push_back(k.row("DATA", off + i));
        }
        sp.delta = delta;
        sp.one = k.R("SC");
        sp.closed = k.R("ONE") - k.R("SC");
        sp.G = G;
        emit_adder(f, sp);
    }
    for (int i = 0; i < H; ++i)
        if (!in_field[i]) f.gated(k.R("ACC", i), k.R("ONE") - k.R("SC"), k.row("DATA", i), 1.0, G);
    f.clear_block(k.b.rows, "ACC");
    k.layer("advance pointer fields", {hb.build()}, &f);
    return k.finish();
}

FunctionBlock make_copy(const BlockContext& cx, const std::string& name, BlockKind kind) {
    const int d = cx.d;
    const int H = kind == BlockKind::Pointer ? cx.ins.height() : d;
    Sketch k(cx, name, kind, H, 3 * d);
    k.section("SC", 2 * d, 3 * d);
    k.locs("LOCB", d, d);
    k.locs("LOCC", 2 * d, d);
    k.work("ACC", H);
    HeadBuilder hb(k.width());
    k.match(hb, "LOCB", "LOCC");
    k.move(hb, "DATA", "ACC");
    FFNBuilder f(k.width());
    land(f, k, "ACC", 1.0);
    k.layer("copy B into C", {hb.build()}, &f);
    return k.finish();
}

}  // namespace

MatmulConstants auto_matmul_constants(double eps, int d, double entry_bound, int n_anchor) {
    if (!(eps > 0) || d < 1 || !(entry_bound > 0) || n_anchor < 1)
        fail(ErrorCode::Validation, "matmul constants need eps > 0, d >= 1, bound > 0 and an anchor column");
    const double G = d * entry_bound * entry_bound;
    MatmulConstants k;
    k.c = eps / (4.0 * G * G);
    k.C = std::log(1600.0 * d * G / (n_anchor * eps));
    return k;
}

Matrix ref_matmul(MatmulVariant v, const Matrix& A, const Matrix& B) {
    switch (v) {
        case MatmulVariant::AtB: return A.transpose() * B;
        case MatmulVariant::BtA: return B.transpose() * A;
        case MatmulVariant::AtA: return A.transpose() * A;
        case MatmulVariant::BtB: return B.transpose() * B;
    }
    return {};
}

double eval_selected(const std::vector<SigmoidSum>& sums, const Matrix& A, double x) {
    double v = 0.0;
    for (size_t f = 0; f < sums.size(); ++f)
        if (static_cast<int>(f) + 1 < A.rows() && A(f + 1, 0) > 0.5) v += sums[f](x);
    return v;
}

BlockFactory add_block() {
    return {"add", BlockKind::Data, [](int d) { return 3 * d; },
            [](const BlockContext& cx) { return make_add_sub(cx, false); },
            [](const Matrix& A, const Matrix& B, const InsLayout&) -> Matrix { return A + B; }};
}

BlockFactory sub_block() {
    return {"sub", BlockKind::Data, [](int d) { return 3 * d; },
            [](const BlockContext& cx) { return make_add_sub(cx, true); },
            [](const Matrix& A, const Matrix& B, const InsLayout&) -> Matrix { return A - B; }};
}

BlockFactory matmul_block(MatmulVariant v, double eps, double entry_bound, const std::string& name) {
    return {name, BlockKind::Data, [](int d) { return 3 * d; },
            [=](const BlockContext& cx) { return make_matmul(cx, v, std::nullopt, eps, entry_bound, 0.0, name); },
            [v](const Matrix& A, const Matrix& B, const InsLayout&) { return ref_matmul(v, A, B); }};
}

BlockFactory matmul_block_fixed(MatmulVariant v, MatmulConstants k, const std::string& name) {
    return {name, BlockKind::Data, [](int d) { return 3 * d; },
            [=](const BlockContext& cx) { return make_matmul(cx, v, k, 0.0, 1.0, 0.0, name); },
            [v](const Matrix& A, const Matrix& B, const InsLayout&) { return ref_matmul(v, A, B); }};
}

BlockFactory percentage_block(double eps, double entry_bound) {
    return {"perc", BlockKind::Data, [](int d) { return 3 * d; },
            [=](const BlockContext& cx) {
                return make_matmul(cx, MatmulVariant::AtB, std::nullopt, eps, entry_bound, 0.01, "perc");
            },
            [](const Matrix& A, const Matrix& B, const InsLayout&) -> Matrix {
                Matrix Bp = B;
                Bp(0, 0) += 0.01;
                return A.transpose() * Bp;
            }};
}

BlockFactory transpose_block() {
    return {"transp", BlockKind::Data, [](int d) { return 3 * d + d * d; }, make_transpose,
            [](const Matrix& A, const Matrix&, const InsLayout&) -> Matrix { return A.transpose(); }};
}

BlockFactory sigmoid_block(std::vector<SigmoidSum> sums, SigmoidBlockOptions opt, const std::string& name) {
    const auto L = sig_layout(sums);
    const bool wide = opt.variant == SigmoidVariant::SingleHeadWide;
    BlockFactory f;
    f.name = name;
    f.kind = BlockKind::Data;
    f.min_scratch = [=](int d) { return wide ? 3 * d + (opt.out_cols ? opt.out_cols : d) * L.T : 3 * d; };
    f.make = [=](const BlockContext& cx) {
        return wide ? make_sigmoid_wide(cx, sums, opt, name) : make_sigmoid_heads(cx, sums, name);
    };
    f.reference = [=](const Matrix& A, const Matrix& B, const InsLayout&) {
        const int d = static_cast<int>(B.cols());
        const int mo = wide && opt.out_cols ? std::min(opt.out_cols, d) : d;
        Matrix C = Matrix::Zero(B.rows(), d);
        for (int j = 0; j < mo; ++j) C(0, j) = eval_selected(sums, A, B(0, j));
        return C;
    };
    return f;
}

BlockFactory incr_pointer_block(const std::string& name, std::vector<int> fields, int delta) {
    BlockFactory f;
    f.name = name;
    f.kind = BlockKind::Pointer;
    f.min_scratch = [](int d) { return 3 * d; };
    f.make = [=](const BlockContext& cx) { return make_incr(cx, name, fields, delta); };
    f.reference = [=](const Matrix& A, const Matrix&, const InsLayout& ins) {
        Matrix C = A;
        const int64_t mod = int64_t{1} << ins.L;
        for (int j = 0; j < C.cols(); ++j)
            for (int off : fields) {
                std::vector<double> bits(ins.L);
                for (int i = 0; i < ins.L; ++i) bits[i] = A(off + i, j);
                int64_t v = ((decode_position(bits) + delta) % mod + mod) % mod;
                auto code = encode_position(static_cast<int>(v), static_cast<int>(mod));
                for (int i = 0; i < ins.L; ++i) C(off + i, j) = code.bits[i];
            }
        return C;
    };
    return f;
}

BlockFactory copy_block(const std::string& name, BlockKind kind) {
    return {name, kind, [](int d) { return 3 * d; },
            [=](const BlockContext& cx) { return make_copy(cx, name, kind); },
            [](const Matrix&, const Matrix& B, const InsLayout&) -> Matrix { return B; }};
}

FunctionBlock build_block(const BlockFactory& f, int d, int s, int n_total) {
    BlockContext cx;
    cx.d = d;
    cx.s = s ? s : f.min_scratch(d);
    cx.n_total = n_total ? n_total : cx.s;
    cx.ins.L = code_length(std::max(cx.n_total, 2));
    return f.make(cx);
}

std::vector<ManifestEntry> block_manifest(const std::vector<BlockFactory>& reg, int d) {
    int s = 0;
    for (const auto& f : reg) s = std::max(s, f.min_scratch(d));
    std::vector<ManifestEntry> out;
    for (const auto& f : reg) {
        auto b = build_block(f, d, s);
        out.push_back({b.name, b.l(), b.h(), b.r(), b.s});
    }
    return out;
}

}  // namespace lf
