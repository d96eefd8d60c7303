#include "loopformer/encodings.hpp"

#include <cmath>

namespace lf {

int code_length(int n) {
    if (n < 1) fail(ErrorCode::Validation, "sequence length must be positive");
    int l = 0;
    while ((int64_t{1} << l) < n) ++l;
    return std::max(l, 1);
}

PosCode encode_position(int i, int n) {
    if (i < 0 || i >= n) fail(ErrorCode::Validation, "position " + std::to_string(i) + " out of range");
    PosCode p;
    p.index = i;
    int l = code_length(n);
    for (int b = 0; b < l; ++b) p.bits.push_back(((i >> b) & 1) ? 1 : -1);
    return p;
}

int decode_position(const std::vector<double>& bits) {
    int v = 0;
    for (size_t b = 0; b < bits.size(); ++b)
        if (bits[b] > 0) v |= (1 << b);
    return v;
}

int dot(const PosCode& a, const PosCode& b) {
    if (a.bits.size() != b.bits.size()) fail(ErrorCode::Validation, "code length mismatch");
    int s = 0;
    for (size_t i = 0; i < a.bits.size(); ++i) s += a.bits[i] * b.bits[i];
    return s;
}

int64_t int_min(int n_bits) { return -(int64_t{1} << (n_bits - 1)) + 1; }
int64_t int_max(int n_bits) { return (int64_t{1} << (n_bits - 1)) - 1; }

IntCode encode_int(int64_t v, int n_bits) {
    if (n_bits < 2 || n_bits > 62) fail(ErrorCode::Validation, "unsupported integer width");
    if (v < int_min(n_bits) || v > int_max(n_bits))
        fail(ErrorCode::Validation, "integer " + std::to_string(v) + " not representable in " +
                                        std::to_string(n_bits) + " bits");
    IntCode c;
    c.value = v;
    uint64_t u = static_cast<uint64_t>(v) & ((uint64_t{1} << n_bits) - 1);
    for (int b = 0; b < n_bits; ++b) c.bits.push_back(((u >> b) & 1) ? 1 : -1);
    return c;
}

int64_t decode_int(const IntCode& c) {
    std::vector<double> b(c.bits.begin(), c.bits.end());
    return decode_int_bits(b);
}

int64_t decode_int_bits(const std::vector<double>& bits) {
    const int n = static_cast<int>(bits.size());
    int64_t v = 0;
    for (int b = 0; b < n - 1; ++b)
        if (bits[b] > 0) v += int64_t{1} << b;
    if (bits[n - 1] > 0) v -= int64_t{1} << (n - 1);
    return v;
}

void emit_adder(FFNBuilder& f, const AdderSpec& sp) {
    const int d = static_cast<int>(sp.x.size());
    if (static_cast<int>(sp.out_rows.size()) != d) fail(ErrorCode::Internal, "adder output width mismatch");
    if (!sp.y.empty() && static_cast<int>(sp.y.size()) != d) fail(ErrorCode::Internal, "adder operand width mismatch");
    const Lin shut = sp.G * sp.closed;
    const int64_t mod = d >= 62 ? 0 : (int64_t{1} << d);
    const int64_t delta = mod ? ((sp.delta % mod) + mod) % mod : sp.delta;
    Lin s;  // partial sum of the low bits, grows with i
    for (int i = 0; i < d; ++i) {
        const double t = std::ldexp(1.0, i);
        s += t * 0.5 * (sp.x[i] + sp.one);
        if (!sp.y.empty()) s += t * 0.5 * (sp.y[i] + sp.one);
        Lin si = s;
        if (sp.y.empty()) si += static_cast<double>(delta & ((int64_t{2} << i) - 1)) * sp.one;
        const int o = sp.out_rows[i];
        f.relu(si - (t - 1) * sp.one - shut, {{o, 2.0}});
        f.relu(si - t * sp.one - shut, {{o, -2.0}});
        f.relu(2 * t * sp.one - si - shut, {{o, 2.0}});
        f.relu((2 * t - 1) * sp.one - si - shut, {{o, -2.0}});
        f.relu(si - (3 * t - 1) * sp.one - shut, {{o, 2.0}});
        f.relu(si - 3 * t * sp.one - shut, {{o, -2.0}});
        f.relu(sp.one - shut, {{o, -3.0}});
        if (sp.cancel) f.gated(Lin::row(o), sp.closed, o, -1.0, sp.G);
    }
}

FeedForward build_increment_ffn(int d, int64_t delta) {
    if (delta <= 0) fail(ErrorCode::Validation, "increment must be positive");
    FFNBuilder f(d);
    AdderSpec sp;
    for (int i = 0; i < d; ++i) {
        sp.x.push_back(Lin::row(i));
        sp.out_rows.push_back(i);
    }
    sp.delta = delta;
    sp.cancel = true;
    emit_adder(f, sp);
    return f.build();
}

FeedForward build_adder_ffn(int d) {
    FFNBuilder f(2 * d);
    AdderSpec sp;
    for (int i = 0; i < d; ++i) {
        sp.x.push_back(Lin::row(i));
        sp.y.push_back(Lin::row(d + i));
        sp.out_rows.push_back(i);
    }
    sp.cancel = true;
    emit_adder(f, sp);
    return f.build();
}

void emit_flag_int(FFNBuilder& f, const std::vector<int>& code, const Lin& one, int out_row) {
    const int n = static_cast<int>(code.size());
    // relu(b_N) + relu(1 - N - sum b); the sum term fires only on the all -1 code (zero)
    f.relu(Lin::row(code[n - 1]), {{out_row, 1.0}});
    Lin z = (1.0 - n) * one;
    for (int r : code) z -= Lin::row(r);
    f.relu(z, {{out_row, 1.0}});
}

FeedForward build_flag_ffn_int(int n_bits) {
    FFNBuilder f(n_bits + 1);
    std::vector<int> rows;
    for (int i = 0; i < n_bits; ++i) rows.push_back(i);
    emit_flag_int(f, rows, Lin(1.0), n_bits);
    return f.build();
}

FeedForward build_flag_ffn_scalar() {
    FFNBuilder f(2);
    Lin x = Lin::row(0);
    f.relu(Lin(1.0), {{1, 1.0}});
    f.relu(x, {{1, -1.0}});
    f.relu(x - 1.0, {{1, 1.0}});
    return f.build();
}

void emit_bitflip(FFNBuilder& f, const std::vector<int>& rows, const Lin& one) {
    // b -> 2 relu(-b) - 1, written as a residual update
    for (int r : rows) {
        f.relu(-Lin::row(r), {{r, 3.0}});
        f.relu(Lin::row(r), {{r, -1.0}});
        f.relu(one, {{r, -1.0}});
    }
}

std::pair<FeedForward, FeedForward> build_bitflip_and_add_one(int n_bits) {
    FFNBuilder flip(n_bits);
    std::vector<int> rows;
    for (int i = 0; i < n_bits; ++i) rows.push_back(i);
    emit_bitflip(flip, rows, Lin(1.0));
    return {flip.build(), build_increment_ffn(n_bits, 1)};
}

}  // namespace lf
