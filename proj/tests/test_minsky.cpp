#include "doctest.h"
#include "loopformer/subleq.hpp"

using namespace lf;

namespace {

using Op = MinskyInstruction::Op;

MinskyInstruction add(int r) { return {Op::Add, r, 0}; }
MinskyInstruction sub(int r, int n) { return {Op::Sub, r, n}; }

void check_projection(const MinskyProgram& mp, int steps) {
    auto direct = run_minsky(mp, steps);
    REQUIRE(direct.halted);
    auto tr = translate_minsky(mp);
    auto ref = run_subleq_reference(tr.program, 6 * steps, {16, true});
    auto proj = project_minsky(tr, ref);
    REQUIRE(proj.halted);
    REQUIRE(proj.states.size() == direct.states.size());
    for (size_t i = 0; i < proj.states.size(); ++i) CHECK(proj.states[i] == direct.states[i]);
}

}  // namespace

TEST_CASE("direct Minsky interpreter") {
    MinskyProgram mp{1, {0}, {add(0), add(0)}};
    auto t = run_minsky(mp, 10);
    CHECK(t.halted);
    CHECK(t.states.back().regs[0] == 2);
}

TEST_CASE("translation of add and sub") {
    MinskyProgram twice{1, {0}, {add(0), add(0)}};
    auto tr = translate_minsky(twice);
    auto ref = run_subleq_reference(tr.program, 4);
    CHECK(ref.states.back().memory[tr.reg_cells[0]] == 2);

    MinskyProgram zero{1, {0}, {sub(0, 1)}};
    auto tz = translate_minsky(zero);
    CHECK(tz.program.num_instructions() == 5);
    auto rz = run_subleq_reference(tz.program, 5);
    CHECK(rz.halted);
    CHECK(rz.states.back().memory[tz.reg_cells[0]] == 0);
}

TEST_CASE("register projections match the direct interpreter") {
    // r1 := r0 by draining r0 into r1 and r2, then r2 back into r0
    MinskyProgram copy{4, {4, 0, 0, 0}, {sub(0, 4), add(1), add(2), sub(3, 0), sub(2, 7), add(0), sub(3, 4)}};
    check_projection(copy, 200);
    // r0 += r1 until r1 is zero
    MinskyProgram add_until_zero{3, {2, 3, 0}, {sub(1, 3), add(0), sub(2, 0)}};
    check_projection(add_until_zero, 100);
    CHECK_THROWS_AS(translate_minsky(MinskyProgram{1, {0}, {sub(0, 5)}}), Error);
}
