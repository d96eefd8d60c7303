#pragma once
// FLEQ: mem[c] = f_m(mem[a], mem[b]); if mem[flag] <= 0 goto p.

#include "loopformer/blocks.hpp"
#include "loopformer/lego.hpp"
#include "loopformer/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace lf {

// a, b, c and flag are memory addresses: data slots first, then one address per
// instruction word. p is an instruction index. The memory section starts at tape
// column s, so address k lives in column s + k.
struct FleqInstruction {
    int a = 0, b = 0, c = 0, m = 0, flag = 0, p = 0, dh = 0, dw = 0;
};
bool operator==(const FleqInstruction& x, const FleqInstruction& y);

struct FunctionRegistry {
    std::string name;
    int d = 4;
    std::vector<BlockFactory> blocks;
    double value_bound = 1e4;

    int M() const { return static_cast<int>(blocks.size()); }
    int s() const;  // max block scratch, at least 3d
    int index(const std::string& fname) const;
    std::vector<std::string> names() const;
};

struct FleqVariable {
    std::string name;
    int addr = 0;  // first column of its d-column slot
    int rows = 1, cols = 1;
};

struct FleqProgram {
    int d = 4;
    Matrix data;                        // d x data_size
    std::vector<FleqInstruction> code;  // last entry is the EOF self-loop
    std::vector<FleqVariable> vars;
    std::map<std::string, int> labels;  // label -> instruction index

    int data_size() const { return static_cast<int>(data.cols()); }
    int size() const { return data_size() + static_cast<int>(code.size()); }  // memory addresses
    int eof() const { return static_cast<int>(code.size()) - 1; }
    int instr_addr(int k) const { return data_size() + k; }
    const FleqVariable& var(const std::string& name) const;
    Matrix value(const std::string& name, const Matrix& data_image) const;
    void validate(const FunctionRegistry& reg) const;
};

// Reserved slots, in address order: flag0 = 1, neg = -1, then a0, b0, c0 (zero).
extern const char* const kFleqReserved[5];

struct FleqState {
    int cycle = 0;
    int pc = 0;
    Matrix data;
    std::vector<FleqInstruction> code;
};

struct FleqTrace {
    std::vector<FleqState> states;
    bool halted = false;
};

double max_data_deviation(const FleqState& a, const FleqState& b);

// Classical semantics with exact block references (true matmul, direct SigmoidSum).
FleqTrace run_fleq_reference(const FleqProgram& p, const FunctionRegistry& reg, int max_steps);
FleqState fleq_step(const FleqProgram& p, const FunctionRegistry& reg, const FleqState& st);

struct FleqMachine {
    FunctionRegistry reg;
    TapeLayout layout;
    InsLayout ins;
    int d = 4, s = 0, n = 0, data_size = 0, n_instr = 0;
    std::vector<FunctionBlock> blocks;
    int max_l = 0;
};

FleqMachine fleq_machine(const FleqProgram& p, const FunctionRegistry& reg);
Matrix assemble_fleq(const FleqProgram& p, const FleqMachine& mc);
FleqState decode_fleq_tape(const FleqMachine& mc, const Matrix& tape, int cycle = 0);

struct FleqBuildOptions {
    double snap_eps = 0.25;
    double beta = 30.0;        // self-attention weight for non-scratch columns in pinned-temperature layers
    double lambda_sel = 200.0; // scale of selection heads merged into a pinned-temperature layer
};

TransformerStack build_fleq_transformer(const FleqMachine& mc, FleqBuildOptions opts = {});

// Tolerance schedule: eps per cycle and the temperature for pointer heads.
struct FleqSchedule {
    double eps_total = 1e-3;
    int cycles = 1;
    double eps_cycle() const { return eps_total / std::max(cycles, 1); }
};
double fleq_auto_lambda(const FleqMachine& mc, double eps);

struct FleqRunOptions {
    bool compare_reference = true;
    FleqBuildOptions build;
};

struct FleqRunReport {
    FleqTrace trace;
    FleqTrace reference;
    std::vector<double> deviation;  // per cycle, vs the reference run from the same start
    double max_deviation = 0.0;
    bool control_match = true;  // pc and instruction words identical every cycle
    Matrix final_tape;
};

FleqRunReport run_fleq(const FleqProgram& p, const FunctionRegistry& reg, int t_cycles, SoftmaxMode mode,
                       FleqRunOptions opts = {});

// .fleq text
FleqProgram parse_fleq(const std::string& text, const FunctionRegistry& reg);
std::string format_fleq(const FleqProgram& p, const FunctionRegistry& reg);

// Registries used by the programs.
struct RegistryOptions {
    int d = 4;
    double eps = 1e-4;         // matmul target
    double entry_bound = 2.0;  // matmul operand bound
    // Bound on |A^T B| entries. When set it replaces d * entry_bound^2 in the
    // matmul constants, which lets c grow when the actual products are small.
    double product_bound = 0.0;
    double value_bound = 1e4;

    double matmul_bound() const;  // entry bound handed to the matmul blocks
};
FunctionRegistry linalg_registry(RegistryOptions o = {});
// add, sub, mul, sigmoid (inverse, sqrt), perc. Needs d >= 3.
FunctionRegistry calculator_registry(const SigmoidSum& inv, const SigmoidSum& sqrt_fit, RegistryOptions o = {});
// linalg + incr_a, incr_b (field += pointer_step), reset (word copy).
// with_sigmoid adds sigmoid (exact single term) and incr_ab, incr_bc (step 1).
FunctionRegistry sgd_registry(RegistryOptions o, int pointer_step, bool with_sigmoid);

}  // namespace lf
