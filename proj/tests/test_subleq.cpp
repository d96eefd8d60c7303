#include "doctest.h"
#include "loopformer/subleq.hpp"

#include <cmath>

using namespace lf;

namespace {

void expect_same(const MachineTrace& a, const MachineTrace& b, const std::string& what) {
    REQUIRE(a.states.size() == b.states.size());
    for (size_t i = 0; i < a.states.size(); ++i) {
        INFO(what << " cycle " << i);
        CHECK(a.states[i].pc == b.states[i].pc);
        CHECK(a.states[i].memory == b.states[i].memory);
        if (i > 0) CHECK(a.states[i].flag == b.states[i].flag);
    }
}

SubleqProgram one_step(int64_t ma, int64_t mb) {
    SubleqBuilder sb;
    int a = sb.cell("a", ma), b = sb.cell("b", mb);
    sb.emit(a, b, SubleqBuilder::kEof);
    sb.emit(0, 0, SubleqBuilder::kEof);
    return sb.build();
}

}  // namespace

TEST_CASE("reference interpreter basics") {
    SubleqProgram eof;
    auto t = run_subleq_reference(eof, 3);
    REQUIRE(t.states.size() == 4);
    for (auto& s : t.states) CHECK(s.pc == 0);
    CHECK(t.halted);

    auto clear = parse_subleq(".mem x 7\nSUBLEQ x x HALT\n");
    auto tc = run_subleq_reference(clear, 1);
    CHECK(tc.states[1].memory[2] == 0);
    CHECK(tc.states[1].pc == clear.eof_index());

    auto add = parse_subleq(".mem x 6\n.mem y 9\n.mem t 0\nSUBLEQ t t\nSUBLEQ x t\nSUBLEQ t y HALT\n");
    auto ta = run_subleq_reference(add, 3);
    CHECK(ta.states[3].memory[add.cell_names.at("y")] == 15);
}

TEST_CASE("overflow is rejected by the oracle") {
    SubleqBuilder sb;
    int a = sb.cell("a", -100), b = sb.cell("b", 100);
    sb.emit(a, b, SubleqBuilder::kEof);
    CHECK_THROWS_AS(run_subleq_reference(sb.build(), 1, {8, true}), Error);
}

TEST_CASE("tape geometry") {
    SubleqProgram eof;
    Matrix x = assemble_subleq(eof, 8);
    const int n = eof.n();
    const int L = code_length(n);
    CHECK(x.rows() == 8 * L + 3 * 8 + 1);
    CHECK(x.cols() == n);
    auto mc = subleq_machine(eof, 8);
    auto st = decode_subleq_tape(eof, mc, x);
    CHECK(st.pc == 0);
    CHECK(st.memory == eof.memory);
}

TEST_CASE("assemble and decode round trip") {
    auto corpus = subleq_corpus(7, 4);
    for (auto& e : corpus) {
        auto mc = subleq_machine(e.program, 8);
        auto st = decode_subleq_tape(e.program, mc, assemble_subleq(e.program, 8));
        CHECK(st.memory == e.program.memory);
        CHECK(st.pc == 0);
    }
}

TEST_CASE("stack shape") {
    SubleqProgram eof;
    auto st = build_subleq_transformer(eof, 8);
    CHECK(st.num_layers() == 9);
    CHECK(st.max_heads() == 2);
    auto st10 = build_subleq_transformer(eof, 8, {SubleqLayers::Strict10, 0.25});
    CHECK(st10.num_layers() == 10);
}

TEST_CASE("one cycle: no jump and jump") {
    auto p = one_step(2, 5);
    auto r = run_subleq_transformer(p, 8, 1, SoftmaxMode::hardmax());
    CHECK(r.trace.states[1].memory[3] == 3);
    CHECK(r.trace.states[1].pc == 1);

    auto q = one_step(5, 3);
    auto s = run_subleq_transformer(q, 8, 1, SoftmaxMode::hardmax());
    CHECK(s.trace.states[1].memory[3] == -2);
    CHECK(s.trace.states[1].pc == q.eof_index());
}

TEST_CASE("EOF is a fixed point of the stack") {
    SubleqProgram eof;
    auto stack = build_subleq_transformer(eof, 8);
    Matrix x = assemble_subleq(eof, 8);
    Matrix x1 = stack.forward(x, SoftmaxMode::hardmax());
    Matrix x2 = stack.forward(x1, SoftmaxMode::hardmax());
    CHECK((x1 - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((x2 - x1).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hardmax differential on the corpus") {
    for (auto& e : subleq_corpus(11, 6)) {
        auto ref = run_subleq_reference(e.program, 64, {8, true});
        for (auto v : {SubleqLayers::Folded9, SubleqLayers::Strict10}) {
            SubleqRunOptions o;
            o.variant = v;
            auto tr = run_subleq_transformer(e.program, 8, 64, SoftmaxMode::hardmax(), o);
            expect_same(ref, tr.trace, e.name);
        }
    }
}

TEST_CASE("softmax with the auto temperature decodes like hardmax") {
    for (auto& e : subleq_corpus(3, 2)) {
        auto mc = subleq_machine(e.program, 8);
        double lam = subleq_auto_lambda(mc, 0.25);
        SubleqRunOptions o;
        o.compare_hardmax = true;
        auto ref = run_subleq_reference(e.program, 16, {8, true});
        auto tr = run_subleq_transformer(e.program, 8, 16, SoftmaxMode::softmax(lam), o);
        expect_same(ref, tr.trace, e.name);
        CHECK(tr.max_precorrection_deviation <= appb_bound(1.0, mc.layout.rows.width(), e.program.n(), lam));
    }
}

TEST_CASE("assembly text") {
    auto p = parse_subleq("; comment\n.mem x 3\nstart: SUBLEQ x x end\nSUBLEQ Z Z start\nend: SUBLEQ Z Z HALT\n");
    CHECK(p.num_instructions() == 3);
    CHECK(p.instructions[0].c == 2);
    CHECK(p.instructions[1].c == 0);
    CHECK(p.instructions[2].c == 3);
    auto q = parse_subleq(format_subleq(p));
    CHECK(q.memory == p.memory);
    for (int k = 0; k < p.num_instructions(); ++k) {
        CHECK(q.instructions[k].a == p.instructions[k].a);
        CHECK(q.instructions[k].b == p.instructions[k].b);
        CHECK(q.instructions[k].c == p.instructions[k].c);
    }
    try {
        parse_subleq(".mem x 1\nSUBLEQ x x nowhere\n");
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Parse);
        CHECK(std::string(e.what()).find("nowhere") != std::string::npos);
    }
    // numeric columns are 1-based: s = 1 so column 4 is cell 2
    auto r = parse_subleq(".mem 4 9\nSUBLEQ 4 4 HALT\n");
    CHECK(r.memory[2] == 9);
    CHECK(r.instructions[0].a == 2);
}
