#include "loopformer/lego.hpp"

namespace lf {

const ColumnSection& TapeLayout::section(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return s;
    fail(ErrorCode::Internal, "unknown column section: " + name);
}

void TapeLayout::validate() const {
    if (n <= 0) fail(ErrorCode::Validation, "tape must have columns");
    if (sections.empty()) fail(ErrorCode::Validation, "tape needs a scratchpad section");
    int at = 0;
    for (const auto& s : sections) {
        if (s.offset != at || s.width < 0) fail(ErrorCode::Validation, "column sections must tile the tape");
        at += s.width;
    }
    if (at != n) fail(ErrorCode::Validation, "column sections do not cover the tape");
    if (!rows.has("ENC") || !rows.has("IND")) fail(ErrorCode::Validation, "layout needs ENC and IND blocks");
    if (rows.height("ENC") != code_length(n)) fail(ErrorCode::Validation, "ENC height must be ceil(log2 n)");
    if (rows.height("IND") != 1) fail(ErrorCode::Validation, "IND must be one row");
}

Matrix TapeLayout::blank_tape() const {
    validate();
    Matrix x = Matrix::Zero(rows.width(), n);
    const int s = scratch();
    const int e = rows.row("ENC");
    for (int j = 0; j < n; ++j) {
        if (j < s) {
            x(rows.row("IND"), j) = 1.0;
        } else {
            auto code = encode_position(j, n);
            for (size_t b = 0; b < code.bits.size(); ++b) x(e + b, j) = code.bits[b];
        }
    }
    return x;
}

TapeLayout make_simple_layout(int n, int s, int h) {
    if (s < 1 || s >= n) fail(ErrorCode::Validation, "scratch width must be in [1, n)");
    TapeLayout l;
    l.n = n;
    const int L = code_length(n);
    l.rows.add("DST", h);
    l.rows.add("SRC", h);
    l.rows.add("STAGE", h);
    l.rows.add("PTR", L);
    l.rows.add("TGT", L);
    l.rows.add("TMP", L);
    l.rows.add("FLAG", 1);
    l.rows.add("ENC", L);
    l.rows.add("IND", 1);
    l.sections = {{"scratch", 0, s}, {"memory", s, n - s}};
    l.validate();
    return l;
}

double default_gate(double value_bound, int height) { return 2.0 * (value_bound + 1.0) * height; }

namespace {

void check_pair(const TapeLayout& l, const std::string& a, const std::string& b) {
    if (l.rows.height(a) != l.rows.height(b))
        fail(ErrorCode::Validation, "row blocks " + a + " and " + b + " differ in height");
}

void check_pointer(const TapeLayout& l, const std::string& pointer) {
    if (l.rows.height(pointer) != l.enc_bits()) fail(ErrorCode::Validation, "pointer block must have ceil(log2 n) rows");
}

}  // namespace

std::vector<int> block_rows(const TapeLayout& l, const std::string& block) {
    std::vector<int> r;
    for (int i = 0; i < l.rows.height(block); ++i) r.push_back(l.rows.row(block, i));
    return r;
}

AttentionHead make_tie_head(const TapeLayout& l, const std::string& pointer, const std::string& src,
                            const std::string& dst, const std::string& stage) {
    check_pointer(l, pointer);
    check_pair(l, src, dst);
    check_pair(l, src, stage);
    HeadBuilder h(l.rows.width());
    for (int b = 0; b < l.enc_bits(); ++b) {
        Lin pe = Lin::row(l.rows.row(pointer, b)) + Lin::row(l.rows.row("ENC", b));
        h.score(pe, pe);
    }
    for (int i = 0; i < l.rows.height(src); ++i) {
        h.value(l.rows.row(stage, i), l.rows.row(src, i), 1.0);
        h.value(l.rows.row(stage, i), l.rows.row(dst, i), 1.0);
    }
    return h.build();
}

AttentionHead make_direct_head(const TapeLayout& l, const std::string& pointer, const std::string& src,
                               const std::string& dst) {
    check_pointer(l, pointer);
    check_pair(l, src, dst);
    HeadBuilder h(l.rows.width());
    for (int b = 0; b < l.enc_bits(); ++b) h.score(Lin::row(l.rows.row("ENC", b)), Lin::row(l.rows.row(pointer, b)));
    for (int i = 0; i < l.rows.height(src); ++i) h.value(l.rows.row(dst, i), l.rows.row(src, i), 1.0);
    return h.build();
}

void emit_tie_read_ffn(FFNBuilder& f, const TapeLayout& l, const std::string& dst, const std::string& stage, double C,
                       int sharers) {
    // scratch only: stage = (k dst + v) / (k + 1), so dst += (k + 1)(stage - dst)
    const double k = sharers + 1.0;
    const Lin gate = k * C * Lin::row(l.rows.row("IND")) - k * C;
    for (int i = 0; i < l.rows.height(dst); ++i) {
        Lin v = Lin::row(l.rows.row(stage, i));
        Lin d = Lin::row(l.rows.row(dst, i));
        f.relu(gate + k * v - k * d, {{l.rows.row(dst, i), 1.0}});
        f.relu(gate - k * v + k * d, {{l.rows.row(dst, i), -1.0}});
    }
    f.clear_block(l.rows, stage);
}

void emit_write_ffn(FFNBuilder& f, const TapeLayout& l, const std::string& dst, const std::string& stage, double C,
                    int sharers) {
    // non-scratch only: stage = (k src + dst) / (k + 1), so dst += ((k + 1) / k)(stage - dst)
    const double k = (sharers + 1.0) / sharers;
    const Lin gate = -k * C * Lin::row(l.rows.row("IND"));
    for (int i = 0; i < l.rows.height(dst); ++i) {
        Lin s = Lin::row(l.rows.row(stage, i));
        Lin d = Lin::row(l.rows.row(dst, i));
        f.relu(gate + k * s - k * d, {{l.rows.row(dst, i), 1.0}});
        f.relu(gate - k * s + k * d, {{l.rows.row(dst, i), -1.0}});
    }
    f.clear_block(l.rows, stage);
}

void emit_offscratch_clear(FFNBuilder& f, const TapeLayout& l, const std::string& block, double C) {
    const Lin ind = Lin::row(l.rows.row("IND"));
    for (int r : block_rows(l, block)) {
        f.relu(Lin::row(r) - C * ind, {{r, -1.0}});
        f.relu(-Lin::row(r) - C * ind, {{r, 1.0}});
    }
}

TransformerLayer build_read_layer(const TapeLayout& l, const std::string& pointer, const std::string& src,
                                  const std::string& dst, double C, ReadForm form, const std::string& stage) {
    l.validate();
    TransformerLayer layer;
    layer.name = "read " + src + "->" + dst;
    FFNBuilder f(l.rows.width());
    if (form == ReadForm::Tie) {
        layer.heads.push_back(make_tie_head(l, pointer, src, dst, stage));
        emit_tie_read_ffn(f, l, dst, stage, C, l.scratch());
    } else {
        layer.heads.push_back(make_direct_head(l, pointer, src, dst));
        // non-scratch queries attend uniformly; drop what they picked up
        emit_offscratch_clear(f, l, dst, C);
    }
    layer.ffn = f.build();
    return layer;
}

TransformerLayer build_write_layer(const TapeLayout& l, const std::string& pointer, const std::string& src,
                                   const std::string& dst, double C, const std::string& stage) {
    l.validate();
    TransformerLayer layer;
    layer.name = "write " + src + "->" + dst;
    layer.heads.push_back(make_tie_head(l, pointer, src, dst, stage));
    FFNBuilder f(l.rows.width());
    emit_write_ffn(f, l, dst, stage, C, l.scratch());
    layer.ffn = f.build();
    return layer;
}

void emit_mux(FFNBuilder& f, const std::vector<int>& counter, const std::vector<int>& inc,
              const std::vector<int>& target, int flag_row, const Lin& one) {
    const Lin flag = Lin::row(flag_row);
    for (size_t k = 0; k < counter.size(); ++k) {
        int c = counter[k];
        f.relu(Lin::row(inc[k]) - flag, {{c, 2.0}});
        f.relu(Lin::row(target[k]) - one + flag, {{c, 2.0}});
        f.relu(one, {{c, -1.0}});
        f.clear(c);
    }
}

std::vector<TransformerLayer> build_branch_layers(const TapeLayout& l, const std::string& flag_row,
                                                  const std::string& counter, const std::string& target) {
    l.validate();
    check_pair(l, counter, target);
    check_pair(l, counter, "TMP");
    const int w = l.rows.width();
    const Lin one = Lin::row(l.rows.row("IND"));
    auto rows_of = [&](const std::string& b) { return block_rows(l, b); };
    TransformerLayer inc;
    inc.name = "branch: increment counter";
    {
        FFNBuilder f(w);
        AdderSpec sp;
        for (int r : rows_of(counter)) sp.x.push_back(Lin::row(r));
        sp.out_rows = rows_of("TMP");
        sp.delta = 1;
        sp.one = one;
        emit_adder(f, sp);
        inc.ffn = f.build();
    }
    TransformerLayer mux;
    mux.name = "branch: select counter";
    {
        FFNBuilder f(w);
        emit_mux(f, rows_of(counter), rows_of("TMP"), rows_of(target), l.rows.row(flag_row), one);
        f.clear_block(l.rows, "TMP");
        mux.ffn = f.build();
    }
    return {inc, mux};
}

void emit_snap(FFNBuilder& f, int row, double eps) {
    const double k = 1.0 / (1.0 - 2.0 * eps);
    Lin b = Lin::row(row);
    f.relu(b + (1.0 - eps), {{row, k}});
    f.relu(b + eps, {{row, -k}});
    f.relu(b - eps, {{row, k}});
    f.relu(b - (1.0 - eps), {{row, -k}});
    f.bias(row, -1.0);
    f.clear(row);
}

TransformerLayer build_error_correction_layer(const TapeLayout& l, double eps, const std::vector<std::string>& blocks) {
    if (!(eps > 0.0 && eps < 0.5)) fail(ErrorCode::Validation, "error-correction eps must be in (0, 0.5)");
    FFNBuilder f(l.rows.width());
    for (const auto& b : blocks)
        for (int i = 0; i < l.rows.height(b); ++i) emit_snap(f, l.rows.row(b, i), eps);
    TransformerLayer layer;
    layer.name = "error correction";
    layer.ffn = f.build();
    return layer;
}

}  // namespace lf
