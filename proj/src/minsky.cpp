#include "loopformer/subleq.hpp"

namespace lf {

bool operator==(const MinskyState& a, const MinskyState& b) { return a.pc == b.pc && a.regs == b.regs; }

namespace {

void check_minsky(const MinskyProgram& mp) {
    if (mp.registers < 1) fail(ErrorCode::Validation, "a Minsky machine needs a register");
    if (!mp.init.empty() && static_cast<int>(mp.init.size()) != mp.registers)
        fail(ErrorCode::Validation, "initial register count mismatch");
    for (auto v : mp.init)
        if (v < 0) fail(ErrorCode::Validation, "Minsky registers are non-negative");
    const int size = static_cast<int>(mp.code.size());
    for (int i = 0; i < size; ++i) {
        const auto& in = mp.code[i];
        if (in.reg < 0 || in.reg >= mp.registers)
            fail(ErrorCode::Validation, "instruction " + std::to_string(i) + " names an unknown register");
        if (in.op == MinskyInstruction::Op::Sub && (in.target < 0 || in.target > size))
            fail(ErrorCode::Validation, "instruction " + std::to_string(i) + " jumps outside the program");
    }
}

}  // namespace

MinskyTrace run_minsky(const MinskyProgram& mp, int max_steps) {
    check_minsky(mp);
    MinskyTrace t;
    MinskyState st;
    st.regs = mp.init.empty() ? std::vector<int64_t>(mp.registers, 0) : mp.init;
    t.states.push_back(st);
    const int size = static_cast<int>(mp.code.size());
    for (int step = 0; step < max_steps && st.pc < size; ++step) {
        const auto& in = mp.code[st.pc];
        if (in.op == MinskyInstruction::Op::Add) {
            ++st.regs[in.reg];
            ++st.pc;
        } else if (st.regs[in.reg] == 0) {
            st.pc = in.target;
        } else {
            --st.regs[in.reg];
            ++st.pc;
        }
        t.states.push_back(st);
    }
    t.halted = st.pc == size;
    return t;
}

MinskyTranslation translate_minsky(const MinskyProgram& mp) {
    check_minsky(mp);
    MinskyTranslation tr;
    SubleqBuilder sb;
    for (int r = 0; r < mp.registers; ++r)
        tr.reg_cells.push_back(sb.cell("r" + std::to_string(r), mp.init.empty() ? 0 : mp.init[r]));
    const int cm1 = sb.cell("c_m1", -1);
    const int c0 = sb.cell("c_0", 0);
    const int cp1 = sb.cell("c_p1", 1);
    const int b = sb.cell("b", 0);

    const int size = static_cast<int>(mp.code.size());
    int j = 0;
    for (const auto& in : mp.code) {
        tr.block_start.push_back(j);
        j += in.op == MinskyInstruction::Op::Add ? 1 : 5;
    }
    auto start = [&](int i) { return i == size ? SubleqBuilder::kEof : tr.block_start[i]; };
    for (int i = 0; i < size; ++i) {
        const auto& in = mp.code[i];
        const int a = tr.reg_cells[in.reg];
        j = tr.block_start[i];
        if (in.op == MinskyInstruction::Op::Add) {
            sb.emit(cm1, a, j + 1);  // mem[a] -= -1
        } else {
            sb.emit(b, b, j + 1);
            sb.emit(a, b, j + 3);  // b = -mem[a] <= 0, always taken
            sb.emit(cp1, a, j + 5);
            sb.emit(c0, a, start(in.target));
            sb.emit(cp1, a, j + 5);
        }
    }
    tr.program = sb.build();
    // a block may fall through to the end of the program, which is EOF
    for (auto& ins : tr.program.instructions)
        if (ins.c > tr.program.eof_index()) fail(ErrorCode::Internal, "Minsky translation jumps past EOF");
    return tr;
}

MinskyTrace project_minsky(const MinskyTranslation& tr, const MachineTrace& t) {
    MinskyTrace out;
    std::map<int, int> minsky_pc;
    for (size_t i = 0; i < tr.block_start.size(); ++i) minsky_pc[tr.block_start[i]] = static_cast<int>(i);
    const int eof = tr.program.eof_index();
    for (const auto& st : t.states) {
        MinskyState ms;
        if (st.pc == eof) {
            ms.pc = static_cast<int>(tr.block_start.size());
        } else {
            auto it = minsky_pc.find(st.pc);
            if (it == minsky_pc.end()) continue;
            ms.pc = it->second;
        }
        for (int c : tr.reg_cells) ms.regs.push_back(st.memory[c]);
        out.states.push_back(ms);
        if (st.pc == eof) {
            out.halted = true;
            break;
        }
    }
    return out;
}

}  // namespace lf
