#pragma once
// SUBLEQ: reference interpreter, tape assembler and the looped transformer.

#include "loopformer/lego.hpp"
#include "loopformer/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lf {

// Operands are 0-based: a, b index memory cells; c indexes instructions, where
// c == program size means the EOF instruction.
struct SubleqInstruction {
    int a = 0, b = 0, c = 0;
};

// Memory cells 0 and 1 are reserved for the EOF instruction and hold 0 and -1.
struct SubleqProgram {
    int s = 1;
    std::vector<int64_t> memory{0, -1};
    std::vector<SubleqInstruction> instructions;
    std::map<std::string, int> cell_names;  // optional symbol table for dumps

    int m() const { return static_cast<int>(memory.size()); }
    int num_instructions() const { return static_cast<int>(instructions.size()); }
    int eof_index() const { return num_instructions(); }
    int n() const { return s + m() + num_instructions() + 1; }
    int cell_column(int cell) const { return s + cell; }
    int instr_column(int k) const { return s + m() + k; }
    void validate(int n_bits) const;
};

struct MachineState {
    int cycle = 0;
    int pc = 0;                   // instruction index (EOF == program size)
    std::vector<int64_t> memory;  // SUBLEQ integer memory
    int flag = 0;                 // 1 if the last executed step jumped
};

struct MachineTrace {
    std::vector<MachineState> states;  // states[0] is the initial state
    bool halted = false;
};

bool operator==(const MachineState& a, const MachineState& b);

struct ReferenceOptions {
    int n_bits = 16;
    bool check_overflow = true;
};

// Runs exactly max_steps steps (EOF is a fixed point, not an exit).
MachineTrace run_subleq_reference(const SubleqProgram& p, int max_steps, ReferenceOptions opts = {});

enum class SubleqLayers { Folded9, Strict10 };

struct SubleqMachine {
    TapeLayout layout;
    int n_bits = 16;
    int L = 1;
    SubleqLayers variant = SubleqLayers::Folded9;
};

SubleqMachine subleq_machine(const SubleqProgram& p, int n_bits, SubleqLayers variant = SubleqLayers::Folded9);
Matrix assemble_subleq(const SubleqProgram& p, int n_bits, TapeLayout* layout_out = nullptr);
MachineState decode_subleq_tape(const SubleqProgram& p, const SubleqMachine& mc, const Matrix& tape, int cycle = 0);

struct SubleqBuildOptions {
    SubleqLayers variant = SubleqLayers::Folded9;
    double eps = 0.25;  // error-correction radius
};

TransformerStack build_subleq_transformer(const SubleqMachine& mc, SubleqBuildOptions opts = {});
// Convenience overload matching the tape geometry of a program.
TransformerStack build_subleq_transformer(const SubleqProgram& p, int n_bits, SubleqBuildOptions opts = {});

// lambda = log(G d n^3 / eps), with d the tape height and G the value bound (1 for +-1 tapes).
double subleq_auto_lambda(const SubleqMachine& mc, double eps, double G = 1.0);
double appb_bound(double G, int d, int n, double lambda);  // e^{log(G d n^3) - lambda}

struct SubleqRunReport {
    MachineTrace trace;
    double max_precorrection_deviation = 0.0;  // vs hardmax, filled when compare_hardmax
    std::vector<double> per_cycle_deviation;
    Matrix final_tape;
};

struct SubleqRunOptions {
    SubleqLayers variant = SubleqLayers::Folded9;
    bool compare_hardmax = false;  // softmax runs: measure deviation before correction
};

SubleqRunReport run_subleq_transformer(const SubleqProgram& p, int n_bits, int t_cycles, SoftmaxMode mode,
                                       SubleqRunOptions opts = {});

// Small helper for writing programs in code.
class SubleqBuilder {
public:
    explicit SubleqBuilder(int s = 1) { prog_.s = s; }
    int cell(const std::string& name, int64_t value);
    int cell_of(const std::string& name) const;
    // Appends an instruction; returns its index. Jump targets may be patched later.
    int emit(int a, int b, int c);
    int emit(const std::string& a, const std::string& b, int c) { return emit(cell_of(a), cell_of(b), c); }
    int next() const { return prog_.num_instructions(); }
    void patch_c(int instr, int c) { prog_.instructions.at(instr).c = c; }
    static constexpr int kEof = -1;  // resolved to the EOF index by build()
    SubleqProgram build() const;

private:
    SubleqProgram prog_;
};

// Text assembly (.sl). Addresses are 1-based absolute tape columns or names.
SubleqProgram parse_subleq(const std::string& text, int s = 1);
std::string format_subleq(const SubleqProgram& p);

// The differential corpus: hand-written programs plus seeded random ones.
struct CorpusEntry {
    std::string name;
    SubleqProgram program;
};
std::vector<CorpusEntry> subleq_corpus(uint64_t seed, int n_random = 20, int n_bits = 8, int steps = 64);

// Minsky machines and their SUBLEQ translation.
struct MinskyInstruction {
    enum class Op { Add, Sub } op = Op::Add;
    int reg = 0;
    int target = 0;  // Sub only: jump here when the register is zero; size() means halt
};

struct MinskyProgram {
    int registers = 1;
    std::vector<int64_t> init;
    std::vector<MinskyInstruction> code;
};

struct MinskyState {
    int pc = 0;
    std::vector<int64_t> regs;
};
bool operator==(const MinskyState& a, const MinskyState& b);

struct MinskyTrace {
    std::vector<MinskyState> states;
    bool halted = false;
};

MinskyTrace run_minsky(const MinskyProgram& mp, int max_steps);

struct MinskyTranslation {
    SubleqProgram program;
    std::vector<int> reg_cells;     // register -> memory cell
    std::vector<int> block_start;   // Minsky pc -> SUBLEQ instruction index
};

MinskyTranslation translate_minsky(const MinskyProgram& mp);
// SUBLEQ reference trace sampled at Minsky instruction boundaries.
MinskyTrace project_minsky(const MinskyTranslation& tr, const MachineTrace& t);

}  // namespace lf
