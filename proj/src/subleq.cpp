#include "loopformer/subleq.hpp"

#include <cmath>

namespace lf {

void SubleqProgram::validate(int n_bits) const {
    if (s < 1) fail(ErrorCode::Validation, "scratchpad width must be at least 1");
    if (m() < 2 || memory[0] != 0 || memory[1] != -1)
        fail(ErrorCode::Validation, "memory cells 0 and 1 are reserved for EOF and must hold 0 and -1");
    for (size_t k = 0; k < memory.size(); ++k)
        if (memory[k] < int_min(n_bits) || memory[k] > int_max(n_bits))
            fail(ErrorCode::Validation, "memory cell " + std::to_string(k) + " overflows " + std::to_string(n_bits) + " bits");
    for (int k = 0; k < num_instructions(); ++k) {
        const auto& in = instructions[k];
        if (in.a < 0 || in.a >= m() || in.b < 0 || in.b >= m())
            fail(ErrorCode::Validation, "instruction " + std::to_string(k) + " addresses a cell outside memory");
        if (in.c < 0 || in.c > eof_index())
            fail(ErrorCode::Validation, "instruction " + std::to_string(k) + " jumps outside the program");
    }
}

bool operator==(const MachineState& a, const MachineState& b) {
    return a.pc == b.pc && a.memory == b.memory && a.flag == b.flag;
}

MachineTrace run_subleq_reference(const SubleqProgram& p, int max_steps, ReferenceOptions opts) {
    p.validate(opts.n_bits);
    if (max_steps < 0) fail(ErrorCode::Validation, "step budget must be non-negative");
    MachineTrace t;
    MachineState st;
    st.pc = 0;
    st.memory = p.memory;
    t.states.push_back(st);
    for (int step = 1; step <= max_steps; ++step) {
        SubleqInstruction in = st.pc == p.eof_index() ? SubleqInstruction{0, 1, p.eof_index()} : p.instructions[st.pc];
        int64_t r = st.memory[in.b] - st.memory[in.a];
        if (opts.check_overflow && (r < int_min(opts.n_bits) || r > int_max(opts.n_bits)))
            fail(ErrorCode::Validation, "subtraction overflow at step " + std::to_string(step));
        st.memory[in.b] = r;
        st.flag = r <= 0 ? 1 : 0;
        st.pc = st.flag ? in.c : st.pc + 1;
        st.cycle = step;
        t.states.push_back(st);
    }
    t.halted = st.pc == p.eof_index();
    return t;
}

SubleqMachine subleq_machine(const SubleqProgram& p, int n_bits, SubleqLayers variant) {
    SubleqMachine mc;
    mc.n_bits = n_bits;
    mc.variant = variant;
    const int n = p.n();
    mc.L = code_length(n);
    const int L = mc.L, N = n_bits;
    auto& l = mc.layout;
    l.n = n;
    l.rows.add("CMD", 3 * L);
    l.rows.add("MEM", N);
    l.rows.add("MA", N);
    l.rows.add("MB", N);
    l.rows.add("ZA", L);
    l.rows.add("ZB", L);
    l.rows.add("ZC", L);
    l.rows.add("ZP", L);
    l.rows.add("ENC", L);
    l.rows.add("IND", 1);
    l.sections = {{"scratch", 0, p.s},
                  {"memory", p.s, p.m()},
                  {"instructions", p.s + p.m(), p.num_instructions() + 1}};
    l.validate();
    if (l.rows.width() != 8 * L + 3 * N + 1) fail(ErrorCode::Internal, "SUBLEQ tape height mismatch");
    return mc;
}

Matrix assemble_subleq(const SubleqProgram& p, int n_bits, TapeLayout* layout_out) {
    p.validate(n_bits);
    SubleqMachine mc = subleq_machine(p, n_bits);
    const auto& l = mc.layout;
    Matrix x = l.blank_tape();
    const int n = p.n(), L = mc.L;
    for (int k = 0; k < p.m(); ++k) {
        auto c = encode_int(p.memory[k], n_bits);
        for (int b = 0; b < n_bits; ++b) x(l.rows.row("MEM", b), p.cell_column(k)) = c.bits[b];
    }
    auto put_cmd = [&](int col, int a_col, int b_col, int c_col) {
        int cols[3] = {a_col, b_col, c_col};
        for (int f = 0; f < 3; ++f) {
            auto z = encode_position(cols[f], n);
            for (int b = 0; b < L; ++b) x(l.rows.row("CMD", f * L + b), col) = z.bits[b];
        }
    };
    for (int k = 0; k < p.num_instructions(); ++k) {
        const auto& in = p.instructions[k];
        put_cmd(p.instr_column(k), p.cell_column(in.a), p.cell_column(in.b), p.instr_column(in.c));
    }
    put_cmd(p.instr_column(p.eof_index()), p.cell_column(0), p.cell_column(1), p.instr_column(p.eof_index()));
    auto z = encode_position(p.instr_column(0), n);
    for (int j = 0; j < p.s; ++j)
        for (int b = 0; b < L; ++b) x(l.rows.row("ZP", b), j) = z.bits[b];
    if (layout_out) *layout_out = l;
    return x;
}

MachineState decode_subleq_tape(const SubleqProgram& p, const SubleqMachine& mc, const Matrix& x, int cycle) {
    const auto& l = mc.layout;
    MachineState st;
    st.cycle = cycle;
    std::vector<double> zp;
    for (int b = 0; b < mc.L; ++b) zp.push_back(x(l.rows.row("ZP", b), 0));
    st.pc = decode_position(zp) - p.instr_column(0);
    for (int k = 0; k < p.m(); ++k) {
        std::vector<double> bits;
        for (int b = 0; b < mc.n_bits; ++b) bits.push_back(x(l.rows.row("MEM", b), p.cell_column(k)));
        st.memory.push_back(decode_int_bits(bits));
    }
    return st;
}

TransformerStack build_subleq_transformer(const SubleqMachine& mc, SubleqBuildOptions opts) {
    const auto& l = mc.layout;
    const int w = l.rows.width();
    const int L = mc.L, N = mc.n_bits;
    const Lin one = Lin::row(l.rows.row("IND"));
    const double C = default_gate(1.0, 3 * L);
    auto rows = [&](const std::string& b) { return block_rows(l, b); };
    std::vector<TransformerLayer> layers;

    // 1: fetch the instruction under the counter into ZA|ZB|ZC
    {
        TransformerLayer t;
        t.name = "fetch instruction";
        HeadBuilder h(w);
        for (int b = 0; b < L; ++b) h.score(Lin::row(l.rows.row("ENC", b)), Lin::row(l.rows.row("ZP", b)));
        const char* dst[3] = {"ZA", "ZB", "ZC"};
        for (int f = 0; f < 3; ++f)
            for (int b = 0; b < L; ++b) h.value(l.rows.row(dst[f], b), l.rows.row("CMD", f * L + b), 1.0);
        t.heads.push_back(h.build());
        FFNBuilder f(w);
        for (auto b : {"ZA", "ZB", "ZC"}) emit_offscratch_clear(f, l, b, C);
        t.ffn = f.build();
        layers.push_back(t);
    }
    // 2: read mem[a] and mem[b], one head each
    {
        TransformerLayer t;
        t.name = "read operands";
        t.heads.push_back(make_direct_head(l, "ZA", "MEM", "MA"));
        t.heads.push_back(make_direct_head(l, "ZB", "MEM", "MB"));
        FFNBuilder f(w);
        emit_offscratch_clear(f, l, "MA", C);
        emit_offscratch_clear(f, l, "MB", C);
        t.ffn = f.build();
        layers.push_back(t);
    }
    // 3-5: mem[b] - mem[a] as flip, +1, add
    {
        TransformerLayer t;
        t.name = "negate: flip bits";
        FFNBuilder f(w);
        emit_bitflip(f, rows("MA"), one);
        t.ffn = f.build();
        layers.push_back(t);
    }
    {
        TransformerLayer t;
        t.name = "negate: add one";
        FFNBuilder f(w);
        AdderSpec sp;
        for (int r : rows("MA")) sp.x.push_back(Lin::row(r));
        sp.out_rows = rows("MA");
        sp.delta = 1;
        sp.one = one;
        sp.cancel = true;
        emit_adder(f, sp);
        t.ffn = f.build();
        layers.push_back(t);
    }
    {
        TransformerLayer t;
        t.name = "add";
        FFNBuilder f(w);
        AdderSpec sp;
        for (int r : rows("MB")) sp.x.push_back(Lin::row(r));
        for (int r : rows("MA")) sp.y.push_back(Lin::row(r));
        sp.out_rows = rows("MB");
        sp.one = one;
        sp.cancel = true;
        emit_adder(f, sp);
        f.clear_block(l.rows, "MA");  // MA becomes the write staging block
        t.ffn = f.build();
        layers.push_back(t);
    }
    // 6: write MB to mem[b]; the flag of the result replaces MB
    auto flag_ffn = [&](FFNBuilder& f) {
        auto mb = rows("MB");
        f.clear_block(l.rows, "MB");
        emit_flag_int(f, mb, one, mb[0]);
    };
    {
        TransformerLayer t;
        t.name = "write back";
        t.heads.push_back(make_tie_head(l, "ZB", "MB", "MEM", "MA"));
        FFNBuilder f(w);
        emit_write_ffn(f, l, "MEM", "MA", C, l.scratch());
        if (opts.variant == SubleqLayers::Folded9) flag_ffn(f);
        t.ffn = f.build();
        layers.push_back(t);
    }
    if (opts.variant == SubleqLayers::Strict10) {
        TransformerLayer t;
        t.name = "flag";
        FFNBuilder f(w);
        flag_ffn(f);
        t.ffn = f.build();
        layers.push_back(t);
    }
    // 7-8: branch
    {
        TransformerLayer t;
        t.name = "increment counter";
        FFNBuilder f(w);
        AdderSpec sp;
        for (int r : rows("ZP")) sp.x.push_back(Lin::row(r));
        sp.out_rows = rows("ZA");
        sp.delta = 1;
        sp.one = one;
        sp.cancel = true;  // drops the fetched a-pointer
        emit_adder(f, sp);
        t.ffn = f.build();
        layers.push_back(t);
    }
    {
        TransformerLayer t;
        t.name = "select counter";
        FFNBuilder f(w);
        emit_mux(f, rows("ZP"), rows("ZA"), rows("ZC"), l.rows.row("MB", 0), one);
        t.ffn = f.build();
        layers.push_back(t);
    }
    // 9: error correction and cleanup
    {
        TransformerLayer t;
        t.name = "error correction";
        FFNBuilder f(w);
        for (int r : rows("MEM")) emit_snap(f, r, opts.eps);
        for (int r : rows("ZP")) emit_snap(f, r, opts.eps);
        for (auto b : {"MB", "ZA", "ZB", "ZC"}) f.clear_block(l.rows, b);
        t.ffn = f.build();
        layers.push_back(t);
    }
    const int expect = opts.variant == SubleqLayers::Folded9 ? 9 : 10;
    if (static_cast<int>(layers.size()) != expect) fail(ErrorCode::Internal, "SUBLEQ layer count mismatch");
    (void)N;
    return TransformerStack(w, std::move(layers));
}

TransformerStack build_subleq_transformer(const SubleqProgram& p, int n_bits, SubleqBuildOptions opts) {
    return build_subleq_transformer(subleq_machine(p, n_bits, opts.variant), opts);
}

double subleq_auto_lambda(const SubleqMachine& mc, double eps, double G) {
    const double d = mc.layout.rows.width();
    const double n = mc.layout.n;
    return std::log(G * d * n * n * n / eps);
}

double appb_bound(double G, int d, int n, double lambda) {
    return std::exp(std::log(G * d * std::pow(static_cast<double>(n), 3)) - lambda);
}

SubleqRunReport run_subleq_transformer(const SubleqProgram& p, int n_bits, int t_cycles, SoftmaxMode mode,
                                       SubleqRunOptions opts) {
    SubleqMachine mc = subleq_machine(p, n_bits, opts.variant);
    SubleqBuildOptions bo;
    bo.variant = opts.variant;
    TransformerStack stack = build_subleq_transformer(mc, bo);
    Matrix x = assemble_subleq(p, n_bits);
    SubleqRunReport rep;
    MachineState s0 = decode_subleq_tape(p, mc, x, 0);
    rep.trace.states.push_back(s0);
    const int nl = stack.num_layers();
    for (int c = 1; c <= t_cycles; ++c) {
        Matrix pre = stack.forward_range(x, mode, 0, nl - 1);
        if (opts.compare_hardmax && !mode.is_hardmax()) {
            Matrix ref = stack.forward_range(x, SoftmaxMode::hardmax(), 0, nl - 1);
            double dev = (pre - ref).cwiseAbs().maxCoeff();
            rep.per_cycle_deviation.push_back(dev);
            rep.max_precorrection_deviation = std::max(rep.max_precorrection_deviation, dev);
        }
        // the flag sits in MB row 0 until the last layer clears it
        int flag = pre(mc.layout.rows.row("MB", 0), 0) > 0.5 ? 1 : 0;
        x = stack.forward_range(pre, mode, nl - 1, nl);
        check_finite(x, "SUBLEQ tape");
        MachineState st = decode_subleq_tape(p, mc, x, c);
        st.flag = flag;
        rep.trace.states.push_back(st);
    }
    rep.trace.halted = rep.trace.states.back().pc == p.eof_index();
    rep.final_tape = x;
    return rep;
}

int SubleqBuilder::cell(const std::string& name, int64_t value) {
    if (prog_.cell_names.count(name)) fail(ErrorCode::Validation, "duplicate cell name " + name);
    prog_.memory.push_back(value);
    int k = prog_.m() - 1;
    prog_.cell_names[name] = k;
    return k;
}

int SubleqBuilder::cell_of(const std::string& name) const {
    if (name == "Z") return 0;
    if (name == "NEG") return 1;
    auto it = prog_.cell_names.find(name);
    if (it == prog_.cell_names.end()) fail(ErrorCode::Validation, "unknown cell " + name);
    return it->second;
}

int SubleqBuilder::emit(int a, int b, int c) {
    prog_.instructions.push_back({a, b, c});
    return prog_.num_instructions() - 1;
}

SubleqProgram SubleqBuilder::build() const {
    SubleqProgram p = prog_;
    for (auto& in : p.instructions)
        if (in.c == kEof) in.c = p.eof_index();
    return p;
}

}  // namespace lf
