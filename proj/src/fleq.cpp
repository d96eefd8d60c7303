#include "loopformer/fleq.hpp"

#include "loopformer/encodings.hpp"

#include <algorithm>
#include <cmath>

namespace lf {

const char* const kFleqReserved[5] = {"flag0", "neg", "a0", "b0", "c0"};

bool operator==(const FleqInstruction& x, const FleqInstruction& y) {
    return x.a == y.a && x.b == y.b && x.c == y.c && x.m == y.m && x.flag == y.flag && x.p == y.p && x.dh == y.dh &&
           x.dw == y.dw;
}

int FunctionRegistry::s() const {
    int s = 3 * d;
    for (const auto& b : blocks) s = std::max(s, b.min_scratch(d));
    return s;
}

int FunctionRegistry::index(const std::string& fname) const {
    for (int i = 0; i < M(); ++i)
        if (blocks[i].name == fname) return i;
    return -1;
}

std::vector<std::string> FunctionRegistry::names() const {
    std::vector<std::string> v;
    for (const auto& b : blocks) v.push_back(b.name);
    return v;
}

const FleqVariable& FleqProgram::var(const std::string& name) const {
    for (const auto& v : vars)
        if (v.name == name) return v;
    fail(ErrorCode::Validation, "unknown variable " + name);
}

Matrix FleqProgram::value(const std::string& name, const Matrix& img) const {
    const auto& v = var(name);
    return img.block(0, v.addr, v.rows, v.cols);
}

void FleqProgram::validate(const FunctionRegistry& reg) const {
    if (reg.M() == 0) fail(ErrorCode::Validation, "function registry is empty");
    if (reg.d != d) fail(ErrorCode::Validation, "program d does not match the registry");
    if (data.rows() != d) fail(ErrorCode::Validation, "data image must have d rows");
    if (code.empty()) fail(ErrorCode::Validation, "program needs an EOF instruction");
    const int k = static_cast<int>(code.size());
    for (int i = 0; i < k; ++i) {
        const auto& in = code[i];
        auto where = "instruction " + std::to_string(i) + ": ";
        if (in.m < 0 || in.m >= reg.M()) fail(ErrorCode::Validation, where + "function index out of range");
        if (in.dh < 0 || in.dh > d || in.dw < 0 || in.dw > d)
            fail(ErrorCode::Validation, where + "operand shape exceeds d = " + std::to_string(d));
        if (in.p < 0 || in.p >= k) fail(ErrorCode::Validation, where + "jump target out of range");
        for (int x : {in.a, in.b, in.c, in.flag})
            if (x < 0 || x >= size()) fail(ErrorCode::Validation, where + "address out of range");
        if (in.dw == 0) continue;
        const bool ptr = reg.blocks[in.m].kind == BlockKind::Pointer;
        for (int x : {in.a, in.b, in.c}) {
            if (x + in.dw > size()) fail(ErrorCode::Validation, where + "operand runs past memory");
        }
        const bool c_code = in.c >= data_size();
        const bool c_end = in.c + in.dw - 1 >= data_size();
        if (ptr && !c_code) fail(ErrorCode::Validation, where + "pointer function must write instruction memory");
        if (!ptr && c_end) fail(ErrorCode::Validation, where + "data function must write data memory");
    }
}

double max_data_deviation(const FleqState& a, const FleqState& b) {
    if (a.data.cols() != b.data.cols() || a.data.rows() != b.data.rows()) return INFINITY;
    return a.data.size() ? (a.data - b.data).cwiseAbs().maxCoeff() : 0.0;
}

namespace {

InsLayout ins_layout(int n, int M) {
    InsLayout ins;
    ins.L = code_length(n);
    ins.LM = code_length(std::max(M, 2));
    return ins;
}

void put_code(Vector& w, int off, int v, int n) {
    auto c = encode_position(v, n);
    for (size_t i = 0; i < c.bits.size(); ++i) w(off + i) = c.bits[i];
}

int get_code(const Vector& w, int off, int L) {
    std::vector<double> bits(L);
    for (int i = 0; i < L; ++i) bits[i] = w(off + i);
    return decode_position(bits);
}

// Instruction word with absolute columns; `base` is the scratch width.
Vector encode_word(const FleqInstruction& in, const InsLayout& ins, int base, int data_size, int n) {
    Vector w = Vector::Zero(ins.height());
    put_code(w, ins.za(), base + in.a, n);
    put_code(w, ins.zb(), base + in.b, n);
    put_code(w, ins.zc(), base + in.c, n);
    put_code(w, ins.zm(), in.m, 1 << ins.LM);
    put_code(w, ins.zflag(), base + in.flag, n);
    put_code(w, ins.zp(), base + data_size + in.p, n);
    w(ins.dh()) = in.dh;
    w(ins.dw()) = in.dw;
    return w;
}

FleqInstruction decode_word(const Vector& w, const InsLayout& ins, int base, int data_size) {
    FleqInstruction in;
    in.a = get_code(w, ins.za(), ins.L) - base;
    in.b = get_code(w, ins.zb(), ins.L) - base;
    in.c = get_code(w, ins.zc(), ins.L) - base;
    in.m = get_code(w, ins.zm(), ins.LM);
    in.flag = get_code(w, ins.zflag(), ins.L) - base;
    in.p = get_code(w, ins.zp(), ins.L) - base - data_size;
    in.dh = static_cast<int>(std::lround(w(ins.dh())));
    in.dw = static_cast<int>(std::lround(w(ins.dw())));
    return in;
}

}  // namespace

FleqState fleq_step(const FleqProgram& p, const FunctionRegistry& reg, const FleqState& st) {
    const int d = p.d, ds = p.data_size();
    const int s = reg.s();
    const int n = s + p.size();
    const InsLayout ins = ins_layout(n, reg.M());
    FleqState nx = st;
    nx.cycle = st.cycle + 1;
    if (st.pc < 0 || st.pc >= static_cast<int>(st.code.size())) fail(ErrorCode::Validation, "program counter out of range");
    const FleqInstruction in = st.code[st.pc];
    if (in.m < 0 || in.m >= reg.M()) fail(ErrorCode::Validation, "function index out of range at runtime");
    const auto& f = reg.blocks[in.m];
    const bool ptr = f.kind == BlockKind::Pointer;
    const int H = ptr ? ins.height() : d;
    auto column = [&](int addr) -> Vector {
        if (addr < 0 || addr >= p.size()) fail(ErrorCode::Validation, "operand address out of range at runtime");
        if (ptr) {
            if (addr < ds) return Vector::Zero(H);
            return encode_word(st.code[addr - ds], ins, s, ds, n);
        }
        if (addr >= ds) return Vector::Zero(H);
        return st.data.col(addr);
    };
    if (in.dw > 0) {
        Matrix A = Matrix::Zero(H, d), B = Matrix::Zero(H, d);
        for (int j = 0; j < in.dw; ++j) {
            A.col(j) = column(in.a + j);
            B.col(j) = column(in.b + j);
        }
        Matrix C = f.reference(A, B, ins);
        for (int j = 0; j < in.dw; ++j) {
            const int t = in.c + j;
            if (ptr) {
                if (t < ds) fail(ErrorCode::Validation, "pointer function wrote data memory");
                nx.code[t - ds] = decode_word(C.col(j), ins, s, ds);
            } else {
                if (t >= ds) fail(ErrorCode::Validation, "data function wrote instruction memory");
                Vector v = Vector::Zero(d);
                for (int r = 0; r < in.dh; ++r) v(r) = C(r, j);
                nx.data.col(t) = v;
            }
        }
    }
    const double fv = in.flag < ds ? nx.data(0, in.flag) : 0.0;
    nx.pc = fv <= 0.0 ? in.p : st.pc + 1;
    if (nx.pc >= static_cast<int>(nx.code.size())) fail(ErrorCode::Validation, "program ran past its last instruction");
    return nx;
}

FleqTrace run_fleq_reference(const FleqProgram& p, const FunctionRegistry& reg, int max_steps) {
    p.validate(reg);
    FleqTrace t;
    FleqState st;
    st.data = p.data;
    st.code = p.code;
    t.states.push_back(st);
    for (int i = 0; i < max_steps; ++i) {
        st = fleq_step(p, reg, st);
        t.states.push_back(st);
    }
    t.halted = t.states.back().pc == p.eof();
    return t;
}

FleqMachine fleq_machine(const FleqProgram& p, const FunctionRegistry& reg) {
    p.validate(reg);
    FleqMachine mc;
    mc.reg = reg;
    mc.d = reg.d;
    mc.s = reg.s();
    mc.data_size = p.data_size();
    mc.n_instr = static_cast<int>(p.code.size());
    mc.n = mc.s + p.size();
    mc.ins = ins_layout(mc.n, reg.M());
    const int d = mc.d, L = code_length(mc.n), H = mc.ins.height();

    BlockContext cx;
    cx.d = d;
    cx.s = mc.s;
    cx.n_total = mc.n;
    cx.value_bound = reg.value_bound;
    cx.ins = mc.ins;
    for (const auto& f : reg.blocks) {
        mc.blocks.push_back(f.make(cx));
        mc.max_l = std::max(mc.max_l, mc.blocks.back().l());
    }

    auto& R = mc.layout.rows;
    R.add("MEM", d);
    R.add("INS", H);
    R.add("ZP", L);
    R.add("CUR", H);
    R.add("M1", 1);
    R.add("M2", 1);
    R.add("M3", 1);
    R.add("RM", d);
    R.add("PTR", L);
    R.add("SWM", d);
    R.add("SWI", H);
    R.add("SM", d);
    R.add("SI", H);
    R.add("FV", 1);
    R.add("FLAG", 1);
    R.add("TMP", L);
    R.add("SECA", 1);
    R.add("SECB", 1);
    R.add("SECC", 1);
    R.add("OFF", 1);
    R.add("POS", L);
    for (int k = 0; k < reg.M(); ++k) {
        R.add("FB" + std::to_string(k), mc.blocks[k].r());
        R.add("ST" + std::to_string(k), mc.blocks[k].r());
    }
    R.add("ENC", L);
    R.add("IND", 1);
    mc.layout.n = mc.n;
    mc.layout.sections = {{"scratch", 0, mc.s}, {"data", mc.s, mc.data_size}, {"code", mc.s + mc.data_size, mc.n_instr}};
    mc.layout.validate();
    return mc;
}

Matrix assemble_fleq(const FleqProgram& p, const FleqMachine& mc) {
    if (p.data_size() != mc.data_size || static_cast<int>(p.code.size()) != mc.n_instr)
        fail(ErrorCode::Validation, "program does not match the machine geometry");
    const auto& R = mc.layout.rows;
    Matrix x = mc.layout.blank_tape();
    const int d = mc.d, s = mc.s, n = mc.n;
    for (int j = 0; j < mc.data_size; ++j) x.block(R.row("MEM"), s + j, d, 1) = p.data.col(j);
    for (int k = 0; k < mc.n_instr; ++k)
        x.block(R.row("INS"), s + mc.data_size + k, mc.ins.height(), 1) =
            encode_word(p.code[k], mc.ins, s, mc.data_size, n);
    auto zp = encode_position(s + mc.data_size, n);
    for (int c = 0; c < s; ++c) {
        for (int i = 0; i < static_cast<int>(zp.bits.size()); ++i) x(R.row("ZP", i), c) = zp.bits[i];
        const int sec = c < 3 * d ? c / d : -1;
        if (sec >= 0) {
            x(R.row(sec == 0 ? "SECA" : sec == 1 ? "SECB" : "SECC"), c) = 1.0;
            x(R.row("OFF"), c) = c % d;
            auto pc = encode_position(c % d, n);
            for (int i = 0; i < static_cast<int>(pc.bits.size()); ++i) x(R.row("POS", i), c) = pc.bits[i];
        }
        for (int k = 0; k < mc.reg.M(); ++k) {
            const auto& b = mc.blocks[k];
            x.block(R.row("ST" + std::to_string(k)), c, b.r(), 1) = b.templ.col(c);
        }
    }
    return x;
}

FleqState decode_fleq_tape(const FleqMachine& mc, const Matrix& x, int cycle) {
    const auto& R = mc.layout.rows;
    FleqState st;
    st.cycle = cycle;
    st.data = x.block(R.row("MEM"), mc.s, mc.d, mc.data_size);
    for (int k = 0; k < mc.n_instr; ++k) {
        Vector w = x.block(R.row("INS"), mc.s + mc.data_size + k, mc.ins.height(), 1);
        st.code.push_back(decode_word(w, mc.ins, mc.s, mc.data_size));
    }
    Vector zp = x.block(R.row("ZP"), 0, R.height("ZP"), 1);
    st.pc = get_code(zp, 0, R.height("ZP")) - mc.s - mc.data_size;
    return st;
}

namespace {

struct Ctx {
    const FleqMachine& mc;
    const RowLayout& R;
    int w;
    Lin ind;
    explicit Ctx(const FleqMachine& m) : mc(m), R(m.layout.rows), w(m.layout.rows.width()) {
        ind = Lin::row(R.row("IND"));
    }
    int row(const std::string& b, int i = 0) const { return R.row(b, i); }
    Lin L(const std::string& b, int i = 0) const { return Lin::row(R.row(b, i)); }
    Lin cur(int off) const { return Lin::row(R.row("CUR", off)); }
};

// Snap to {-1, 1} on scratch, zero elsewhere.
void snap_gated(FFNBuilder& f, int row, double eps, const Lin& one) {
    const double k = 1.0 / (1.0 - 2.0 * eps);
    Lin b = Lin::row(row);
    f.relu(b + (1.0 - eps) * one, {{row, k}});
    f.relu(b + eps * one, {{row, -k}});
    f.relu(b - eps * one, {{row, k}});
    f.relu(b - (1.0 - eps) * one, {{row, -k}});
    f.relu(one, {{row, -1.0}});
    f.clear(row);
}

// Round to {0..top} on scratch, zero elsewhere.
void round_gated(FFNBuilder& f, int row, int top, const Lin& one) {
    Lin x = Lin::row(row);
    for (int k = 1; k <= top; ++k) {
        f.relu(x - (k - 0.75) * one, {{row, 2.0}});
        f.relu(x - (k - 0.25) * one, {{row, -2.0}});
    }
    f.clear(row);
}

// L_M - z_k . z_m: zero for the selected block, at least 2 otherwise.
Lin selector_gap(const Ctx& c, int k) {
    const auto& ins = c.mc.ins;
    auto code = encode_position(k, 1 << ins.LM);
    Lin g = static_cast<double>(ins.LM) * c.ind;
    for (int b = 0; b < ins.LM; ++b) g -= code.bits[b] * c.cur(ins.zm() + b);
    return g;
}

TransformerLayer fetch_layer(const Ctx& c, double eps) {
    TransformerLayer l;
    l.name = "fetch";
    HeadBuilder hb(c.w);
    for (int i = 0; i < c.R.height("ZP"); ++i) hb.score(c.L("ENC", i), c.L("ZP", i));
    for (int i = 0; i < c.R.height("INS"); ++i) hb.value(c.row("CUR", i), c.row("INS", i), 1.0);
    l.heads.push_back(hb.build());
    FFNBuilder f(c.w);
    const auto& ins = c.mc.ins;
    for (int i = 0; i < ins.height(); ++i) {
        if (i == ins.dh() || i == ins.dw())
            round_gated(f, c.row("CUR", i), c.mc.d, c.ind);
        else
            snap_gated(f, c.row("CUR", i), eps, c.ind);
    }
    l.ffn = f.build();
    return l;
}

TransformerLayer setup_layer(const Ctx& c) {
    TransformerLayer l;
    l.name = "masks and operand pointers";
    FFNBuilder f(c.w);
    const auto& ins = c.mc.ins;
    const int d = c.mc.d;
    const double G = 4.0 * (d + 2);
    const Lin dw = c.cur(ins.dw()), dh = c.cur(ins.dh()), off = c.L("OFF");
    const char* secs[3] = {"SECA", "SECB", "SECC"};
    const char* masks[3] = {"M1", "M2", "M3"};
    for (int k = 0; k < 3; ++k) {
        const Lin shut = G * (c.ind - c.L(secs[k]));
        f.relu(dw - off - shut, {{c.row(masks[k]), 1.0}});
        f.relu(dw - off - c.ind - shut, {{c.row(masks[k]), -1.0}});
    }
    for (int r = 0; r < d; ++r) {
        f.relu(dh - r * c.ind, {{c.row("RM", r), 1.0}});
        f.relu(dh - (r + 1) * c.ind, {{c.row("RM", r), -1.0}});
    }
    const int L = c.R.height("PTR");
    const int fields[3] = {ins.za(), ins.zb(), ins.zc()};
    for (int k = 0; k < 3; ++k) {
        AdderSpec sp;
        for (int i = 0; i < L; ++i) {
            sp.x.push_back(c.cur(fields[k] + i));
            sp.y.push_back(c.L("POS", i));
            sp.out_rows.push_back(c.row("PTR", i));
        }
        sp.one = c.ind;
        sp.closed = c.ind - c.L(secs[k]);
        sp.G = std::ldexp(1.0, L + 4);
        emit_adder(f, sp);
    }
    l.ffn = f.build();
    return l;
}

TransformerLayer read_layer(const Ctx& c, double C) {
    TransformerLayer l;
    l.name = "operand read";
    HeadBuilder hb(c.w);
    for (int i = 0; i < c.R.height("PTR"); ++i) hb.score(c.L("ENC", i), c.L("PTR", i));
    for (int i = 0; i < c.mc.d; ++i) hb.value(c.row("SWM", i), c.row("MEM", i), 1.0);
    for (int i = 0; i < c.mc.ins.height(); ++i) hb.value(c.row("SWI", i), c.row("INS", i), 1.0);
    l.heads.push_back(hb.build());
    FFNBuilder f(c.w);
    emit_offscratch_clear(f, c.mc.layout, "SWM", C);
    emit_offscratch_clear(f, c.mc.layout, "SWI", C);
    l.ffn = f.build();
    return l;
}

TransformerLayer route_in_layer(const Ctx& c, double G) {
    TransformerLayer l;
    l.name = "route operands to the selected block";
    FFNBuilder f(c.w);
    for (int k = 0; k < c.mc.reg.M(); ++k) {
        const auto& b = c.mc.blocks[k];
        const std::string fb = "FB" + std::to_string(k), st = "ST" + std::to_string(k);
        const Lin gap = selector_gap(c, k);
        const Lin closed = c.ind - c.L("M1") - c.L("M2") + gap;
        const bool ptr = b.kind == BlockKind::Pointer;
        for (int r = 0; r < b.data_height(); ++r)
            f.gated(ptr ? c.L("SWI", r) : c.L("SWM", r), closed, c.row(fb, r), 1.0, G);
        for (const auto& name : b.structure) {
            const auto& blk = b.rows.block(name);
            for (int i = 0; i < blk.height; ++i)
                f.gated(c.L(st, blk.offset + i), gap, c.row(fb, blk.offset + i), 1.0, G);
        }
    }
    // only the C section keeps its pointer for the write-back
    for (int i = 0; i < c.R.height("PTR"); ++i) f.gated(c.L("PTR", i), c.L("M3"), c.row("PTR", i), -1.0, 2.0);
    f.clear_block(c.R, "SWM");
    f.clear_block(c.R, "SWI");
    l.ffn = f.build();
    return l;
}

std::vector<TransformerLayer> block_layers(const Ctx& c, const FleqBuildOptions& o) {
    std::vector<TransformerLayer> out;
    const auto& mc = c.mc;
    std::vector<std::vector<int>> maps;
    for (int k = 0; k < mc.reg.M(); ++k) {
        std::vector<int> m(mc.blocks[k].r());
        const int base = c.row("FB" + std::to_string(k));
        for (int i = 0; i < mc.blocks[k].r(); ++i) m[i] = base + i;
        maps.push_back(std::move(m));
    }
    const int L = c.R.height("ENC");
    for (int j = 0; j < mc.max_l; ++j) {
        TransformerLayer layer;
        layer.name = "function blocks, step " + std::to_string(j + 1);
        layer.ffn.w1 = Matrix::Zero(0, c.w);
        layer.ffn.b1 = Vector::Zero(0);
        layer.ffn.w2 = Matrix::Zero(c.w, 0);
        layer.ffn.b2 = Vector::Zero(c.w);
        std::vector<TransformerLayer> parts;
        std::vector<int> owner;
        int heads = 0;
        for (int k = 0; k < mc.reg.M(); ++k) {
            if (j >= mc.blocks[k].l()) continue;
            // heads are scattered below; only the feed-forward half is embedded here
            const TransformerLayer& src = mc.blocks[k].layers[j];
            TransformerLayer ffn_only;
            ffn_only.ffn = src.ffn;
            parts.push_back(embed_layer(ffn_only, c.w, maps[k]));
            parts.back().heads = src.heads;
            owner.push_back(k);
            heads = std::max(heads, static_cast<int>(src.heads.size()));
        }
        for (const auto& p : parts) {
            // feed-forward halves act on disjoint rows, so they stack
            const auto& F = p.ffn;
            FeedForward& G = layer.ffn;
            Matrix w1(G.w1.rows() + F.w1.rows(), c.w);
            w1 << G.w1, F.w1;
            Vector b1(G.b1.size() + F.b1.size());
            b1 << G.b1, F.b1;
            Matrix w2(c.w, G.w2.cols() + F.w2.cols());
            w2 << G.w2, F.w2;
            G.w1 = std::move(w1);
            G.b1 = std::move(b1);
            G.w2 = std::move(w2);
            G.b2 += F.b2;
        }
        for (int h = 0; h < heads; ++h) {
            bool pinned = false;
            for (const auto& p : parts)
                if (h < static_cast<int>(p.heads.size()) && p.heads[h].fixed_lambda) pinned = true;
            std::vector<Matrix> ks, qs;
            Matrix V = Matrix::Zero(c.w, c.w);
            for (size_t pi = 0; pi < parts.size(); ++pi) {
                const auto& p = parts[pi];
                if (h >= static_cast<int>(p.heads.size())) continue;
                const auto& hd = p.heads[h];
                if (hd.fixed_lambda && *hd.fixed_lambda != 1.0)
                    fail(ErrorCode::Internal, "merged heads expect a pinned temperature of 1");
                const auto& map = maps[owner[pi]];
                Matrix k = Matrix::Zero(hd.key.rows(), c.w), q = Matrix::Zero(hd.query.rows(), c.w);
                for (int col = 0; col < hd.key.cols(); ++col) {
                    k.col(map[col]) = hd.key.col(col);
                    q.col(map[col]) = hd.query.col(col);
                }
                if (pinned && !hd.fixed_lambda) q *= o.lambda_sel;
                ks.push_back(std::move(k));
                qs.push_back(std::move(q));
                for (int r = 0; r < hd.value.rows(); ++r)
                    for (int col = 0; col < hd.value.cols(); ++col)
                        if (hd.value(r, col) != 0.0) V(map[r], map[col]) += hd.value(r, col);
            }
            // non-scratch columns attend to themselves and pick up zeros
            const double beta = pinned ? o.beta : 1.0;
            Matrix ke = Matrix::Zero(L, c.w), qe = Matrix::Zero(L, c.w);
            for (int i = 0; i < L; ++i) {
                ke(i, c.row("ENC", i)) = beta;
                qe(i, c.row("ENC", i)) = 1.0;
            }
            ks.push_back(ke);
            qs.push_back(qe);
            int rows = 0;
            for (const auto& m : ks) rows += m.rows();
            AttentionHead a;
            a.key = Matrix(rows, c.w);
            a.query = Matrix(rows, c.w);
            int at = 0;
            for (size_t i = 0; i < ks.size(); ++i) {
                a.key.middleRows(at, ks[i].rows()) = ks[i];
                a.query.middleRows(at, qs[i].rows()) = qs[i];
                at += ks[i].rows();
            }
            a.value = std::move(V);
            if (pinned) a.fixed_lambda = 1.0;
            layer.heads.push_back(std::move(a));
        }
        out.push_back(std::move(layer));
    }
    return out;
}

TransformerLayer route_back_layer(const Ctx& c, double G) {
    TransformerLayer l;
    l.name = "route results back";
    FFNBuilder f(c.w);
    for (int k = 0; k < c.mc.reg.M(); ++k) {
        const auto& b = c.mc.blocks[k];
        const std::string fb = "FB" + std::to_string(k);
        const Lin gap = selector_gap(c, k);
        const bool ptr = b.kind == BlockKind::Pointer;
        for (int r = 0; r < b.data_height(); ++r) {
            Lin closed = c.ind - c.L("M3") + gap;
            if (!ptr) closed += c.ind - c.L("RM", r);
            f.gated(c.L(fb, r), closed, ptr ? c.row("SWI", r) : c.row("SWM", r), 1.0, G);
        }
        f.clear_block(c.R, fb);
    }
    l.ffn = f.build();
    return l;
}

TransformerLayer write_layer(const Ctx& c, double C) {
    TransformerLayer l;
    l.name = "write back";
    HeadBuilder hb(c.w);
    for (int i = 0; i < c.R.height("PTR"); ++i) {
        Lin p = c.L("PTR", i) + c.L("ENC", i);
        hb.score(p, p);
    }
    for (int i = 0; i < c.mc.d; ++i) {
        hb.value(c.row("SM", i), c.row("MEM", i), 1.0);
        hb.value(c.row("SM", i), c.row("SWM", i), 1.0);
    }
    for (int i = 0; i < c.mc.ins.height(); ++i) {
        hb.value(c.row("SI", i), c.row("INS", i), 1.0);
        hb.value(c.row("SI", i), c.row("SWI", i), 1.0);
    }
    l.heads.push_back(hb.build());
    FFNBuilder f(c.w);
    emit_write_ffn(f, c.mc.layout, "MEM", "SM", C);
    emit_write_ffn(f, c.mc.layout, "INS", "SI", C);
    f.clear_block(c.R, "SWM");
    f.clear_block(c.R, "SWI");
    f.clear_block(c.R, "PTR");
    l.ffn = f.build();
    return l;
}

TransformerLayer flag_layer(const Ctx& c, double G) {
    TransformerLayer l;
    l.name = "flag read";
    const auto& ins = c.mc.ins;
    HeadBuilder hb(c.w);
    for (int i = 0; i < ins.L; ++i) hb.score(c.L("ENC", i), c.cur(ins.zflag() + i));
    hb.value(c.row("FV"), c.row("MEM", 0), 1.0);
    l.heads.push_back(hb.build());
    FFNBuilder f(c.w);
    // FLAG = 1 - relu(v) + relu(v - 1) on scratch
    const Lin v = c.L("FV"), off = G * (c.ind - 1.0);
    f.relu(c.ind, {{c.row("FLAG"), 1.0}});
    f.relu(v + off, {{c.row("FLAG"), -1.0}});
    f.relu(v - c.ind + off, {{c.row("FLAG"), 1.0}});
    AdderSpec sp;
    for (int i = 0; i < ins.L; ++i) {
        sp.x.push_back(c.L("ZP", i));
        sp.out_rows.push_back(c.row("TMP", i));
    }
    sp.delta = 1;
    sp.one = c.ind;
    emit_adder(f, sp);
    f.clear(c.row("FV"));
    l.ffn = f.build();
    return l;
}

TransformerLayer mux_layer(const Ctx& c) {
    TransformerLayer l;
    l.name = "branch";
    const auto& ins = c.mc.ins;
    FFNBuilder f(c.w);
    std::vector<int> zp, tmp, tgt;
    for (int i = 0; i < ins.L; ++i) {
        zp.push_back(c.row("ZP", i));
        tmp.push_back(c.row("TMP", i));
        tgt.push_back(c.row("CUR", ins.zp() + i));
    }
    emit_mux(f, zp, tmp, tgt, c.row("FLAG"), c.ind);
    f.clear_block(c.R, "TMP");
    f.clear(c.row("FLAG"));
    l.ffn = f.build();
    return l;
}

TransformerLayer cleanup_layer(const Ctx& c, double eps) {
    TransformerLayer l;
    l.name = "cleanup";
    FFNBuilder f(c.w);
    for (int i = 0; i < c.R.height("ZP"); ++i) snap_gated(f, c.row("ZP", i), eps, c.ind);
    for (const char* b : {"CUR", "M1", "M2", "M3", "RM"}) f.clear_block(c.R, b);
    l.ffn = f.build();
    return l;
}

}  // namespace

TransformerStack build_fleq_transformer(const FleqMachine& mc, FleqBuildOptions opts) {
    if (mc.reg.M() == 0) fail(ErrorCode::Validation, "function registry is empty");
    for (const auto& b : mc.blocks)
        if (b.d != mc.d || b.s != mc.s || b.n_total != mc.n)
            fail(ErrorCode::Validation, "block " + b.name + " was built for a different machine shape");
    Ctx c(mc);
    const double V = mc.reg.value_bound;
    const double C = default_gate(V, mc.d + mc.ins.height());
    const double G = 4.0 * (V + 1.0);
    std::vector<TransformerLayer> layers;
    layers.push_back(fetch_layer(c, opts.snap_eps));
    layers.push_back(setup_layer(c));
    layers.push_back(read_layer(c, C));
    layers.push_back(route_in_layer(c, G));
    for (auto& l : block_layers(c, opts)) layers.push_back(std::move(l));
    layers.push_back(route_back_layer(c, G));
    layers.push_back(write_layer(c, C));
    layers.push_back(flag_layer(c, G));
    layers.push_back(mux_layer(c));
    layers.push_back(cleanup_layer(c, opts.snap_eps));
    if (static_cast<int>(layers.size()) != 9 + mc.max_l)
        fail(ErrorCode::Internal, "FLEQ stack must have 9 + max l layers");
    return TransformerStack(c.w, std::move(layers));
}

double fleq_auto_lambda(const FleqMachine& mc, double eps) {
    return std::log(mc.reg.value_bound * mc.layout.rows.width() * std::pow(static_cast<double>(mc.n), 3) / eps);
}

FleqRunReport run_fleq(const FleqProgram& p, const FunctionRegistry& reg, int t_cycles, SoftmaxMode mode,
                       FleqRunOptions opts) {
    FleqMachine mc = fleq_machine(p, reg);
    TransformerStack stack = build_fleq_transformer(mc, opts.build);
    Matrix x = assemble_fleq(p, mc);
    FleqRunReport rep;
    rep.trace.states.push_back(decode_fleq_tape(mc, x, 0));
    FleqState ref;
    ref.data = p.data;
    ref.code = p.code;
    if (opts.compare_reference) rep.reference.states.push_back(ref);
    LoopOptions lo;
    for (int t = 1; t <= t_cycles; ++t) {
        x = stack.forward(x, mode);
        check_finite(x, "FLEQ tape");
        if (x.cwiseAbs().maxCoeff() > lo.magnitude_guard)
            fail(ErrorCode::Numeric, "FLEQ tape exceeded the magnitude guard at cycle " + std::to_string(t));
        FleqState st = decode_fleq_tape(mc, x, t);
        if (opts.compare_reference) {
            ref = fleq_step(p, reg, ref);
            rep.reference.states.push_back(ref);
            double dev = max_data_deviation(st, ref);
            rep.deviation.push_back(dev);
            rep.max_deviation = std::max(rep.max_deviation, dev);
            if (st.pc != ref.pc || !(st.code == ref.code)) rep.control_match = false;
        }
        rep.trace.states.push_back(std::move(st));
    }
    rep.trace.halted = rep.trace.states.back().pc == p.eof();
    if (opts.compare_reference) rep.reference.halted = rep.reference.states.back().pc == p.eof();
    rep.final_tape = x;
    return rep;
}

double RegistryOptions::matmul_bound() const {
    return product_bound > 0 ? std::sqrt(product_bound / d) : entry_bound;
}

FunctionRegistry linalg_registry(RegistryOptions o) {
    FunctionRegistry r;
    r.name = "linalg";
    r.d = o.d;
    r.value_bound = o.value_bound;
    r.blocks = {matmul_block(MatmulVariant::AtB, o.eps, o.matmul_bound()), sub_block(), transpose_block(), add_block()};
    return r;
}

FunctionRegistry calculator_registry(const SigmoidSum& inv, const SigmoidSum& sq, RegistryOptions o) {
    if (o.d < 3) fail(ErrorCode::Validation, "calculator registry needs d >= 3");
    FunctionRegistry r;
    r.name = "calculator";
    r.d = o.d;
    r.value_bound = o.value_bound;
    SigmoidBlockOptions so;
    so.variant = SigmoidVariant::SingleHeadWide;
    so.out_cols = 1;
    so.input_bound = std::max(inv.hi, sq.hi) * 2.0;
    r.blocks = {add_block(), sub_block(), matmul_block(MatmulVariant::AtB, o.eps, o.matmul_bound()),
                sigmoid_block({inv, sq}, so), percentage_block(o.eps, o.matmul_bound())};
    return r;
}

FunctionRegistry sgd_registry(RegistryOptions o, int step, bool with_sigmoid) {
    FunctionRegistry r = linalg_registry(o);
    r.name = with_sigmoid ? "nn" : "sgd";
    // field offsets depend on the machine's code length, so resolve them late
    auto incr = [](const std::string& name, std::vector<char> fields, int delta) {
        BlockFactory f = incr_pointer_block(name, {}, delta);
        f.make = [=](const BlockContext& cx) {
            std::vector<int> offs;
            for (char c : fields) offs.push_back(c == 'a' ? cx.ins.za() : c == 'b' ? cx.ins.zb() : cx.ins.zc());
            return incr_pointer_block(name, offs, delta).make(cx);
        };
        f.reference = [=](const Matrix& A, const Matrix& B, const InsLayout& ins) {
            std::vector<int> offs;
            for (char c : fields) offs.push_back(c == 'a' ? ins.za() : c == 'b' ? ins.zb() : ins.zc());
            return incr_pointer_block(name, offs, delta).reference(A, B, ins);
        };
        return f;
    };
    r.blocks.push_back(incr("incr_a", {'a'}, step));
    r.blocks.push_back(incr("incr_b", {'b'}, step));
    r.blocks.push_back(copy_block("reset", BlockKind::Pointer));
    if (with_sigmoid) {
        SigmoidSum sig;
        sig.name = "sigma";
        sig.terms.push_back({1.0, 1.0, 0.0});
        SigmoidBlockOptions so;
        so.variant = SigmoidVariant::SingleHeadWide;
        so.input_bound = 50.0;
        r.blocks.push_back(sigmoid_block({sig}, so));
        r.blocks.push_back(incr("incr_ab", {'a', 'b'}, 1));
        r.blocks.push_back(incr("incr_bc", {'b', 'c'}, 1));
    }
    return r;
}

}  // namespace lf
