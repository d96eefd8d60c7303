#pragma once
// +-1 binary codes for positions and integers, and the ReLU nets that act on them.

#include "loopformer/builder.hpp"
#include "loopformer/tensor.hpp"

#include <cstdint>
#include <vector>

namespace lf {

// Bits are LSB first; +1 means the bit is set.
struct PosCode {
    std::vector<int> bits;
    int index = 0;
};

struct IntCode {
    std::vector<int> bits;  // last entry is the sign bit
    int64_t value = 0;
};

int code_length(int n);  // ceil(log2 n), at least 1
PosCode encode_position(int i, int n);
int decode_position(const std::vector<double>& bits);  // rounds each entry to its sign
int dot(const PosCode& a, const PosCode& b);

int64_t int_min(int n_bits);  // -2^(N-1) + 1
int64_t int_max(int n_bits);  //  2^(N-1) - 1
IntCode encode_int(int64_t v, int n_bits);
int64_t decode_int(const IntCode& c);
int64_t decode_int_bits(const std::vector<double>& bits);  // from tape values

// Ripple-free bit adder on +-1 codes. Output bit i of x + y (or x + delta when y is
// empty), wrapping mod 2^d. `one` is the affine expression that equals 1 on columns
// where the adder should act; `closed` >= 1 shuts every unit off (scaled by G).
// When `cancel` is set the current value of out_rows is subtracted (in-place update).
struct AdderSpec {
    std::vector<Lin> x;
    std::vector<Lin> y;
    int64_t delta = 0;
    Lin one = Lin(1.0);
    Lin closed = Lin(0.0);
    double G = 0.0;
    std::vector<int> out_rows;
    bool cancel = false;
};
void emit_adder(FFNBuilder& f, const AdderSpec& spec);

// Unit counts of the standalone nets, for size reports.
FeedForward build_increment_ffn(int d, int64_t delta);
// Two-operand adder: rows [0,d) hold x, rows [d,2d) hold y; x is overwritten with x+y.
FeedForward build_adder_ffn(int d);
// Rows [0,N) hold the code, row N receives the flag.
FeedForward build_flag_ffn_int(int n_bits);
// Row 0 holds the scalar, row 1 receives the flag.
FeedForward build_flag_ffn_scalar();
// In-place flip, then in-place +1; composing both negates.
std::pair<FeedForward, FeedForward> build_bitflip_and_add_one(int n_bits);

// Emitters used by the machine builders.
void emit_flag_int(FFNBuilder& f, const std::vector<int>& code_rows, const Lin& one, int out_row);
void emit_bitflip(FFNBuilder& f, const std::vector<int>& rows, const Lin& one);

}  // namespace lf
