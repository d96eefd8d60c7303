#pragma once
// Read, write, branch and error-correction layers over a declared tape layout.

#include "loopformer/builder.hpp"
#include "loopformer/encodings.hpp"
#include "loopformer/tensor.hpp"

#include <string>
#include <vector>

namespace lf {

struct ColumnSection {
    std::string name;
    int offset = 0;
    int width = 0;
};

// Row blocks plus column sections. Conventions:
//  - block "ENC" holds encode_position(i, n) in every non-scratch column and is zero
//    on scratch columns, so a pointer in scratch and an encoding elsewhere can share
//    one key/query projection;
//  - block "IND" is 1 exactly on scratch columns;
//  - the first section is the scratchpad.
struct TapeLayout {
    RowLayout rows;
    std::vector<ColumnSection> sections;
    int n = 0;

    int scratch() const { return sections.empty() ? 0 : sections.front().width; }
    const ColumnSection& section(const std::string& name) const;
    int enc_bits() const { return rows.height("ENC"); }
    void validate() const;
    // Zero tape with ENC and IND filled in.
    Matrix blank_tape() const;
};

// Standard layout: [dst(h) | src(h) | stage(h) | PTR(L) | ENC(L) | IND(1)] with s scratch
// columns and n total. Used by tests and as a reference for the machine layouts.
TapeLayout make_simple_layout(int n, int s, int h);

enum class ReadForm {
    Tie,    // keys = queries = pointer + encoding; scratch splits 1/2 self, 1/2 target
    Direct  // queries = pointer, keys = encoding; dst must be zero on entry
};

// Value bound used to size the default gate constant 2(G+1)h.
double default_gate(double value_bound, int height);

TransformerLayer build_read_layer(const TapeLayout& l, const std::string& pointer, const std::string& src,
                                  const std::string& dst, double C, ReadForm form = ReadForm::Tie,
                                  const std::string& stage = "STAGE");
TransformerLayer build_write_layer(const TapeLayout& l, const std::string& pointer, const std::string& src,
                                   const std::string& dst, double C, const std::string& stage = "STAGE");
// Needs a block "TMP" of counter height. Flag row must hold 0 or 1 on scratch.
std::vector<TransformerLayer> build_branch_layers(const TapeLayout& l, const std::string& flag_row,
                                                  const std::string& counter, const std::string& target);
TransformerLayer build_error_correction_layer(const TapeLayout& l, double eps, const std::vector<std::string>& blocks);

// Pieces shared with the machine builders.
AttentionHead make_tie_head(const TapeLayout& l, const std::string& pointer, const std::string& src,
                            const std::string& dst, const std::string& stage);
AttentionHead make_direct_head(const TapeLayout& l, const std::string& pointer, const std::string& src,
                               const std::string& dst);
// `sharers` is the number of scratch columns holding the same pointer; they split
// the attention of the target column with it.
void emit_tie_read_ffn(FFNBuilder& f, const TapeLayout& l, const std::string& dst, const std::string& stage, double C,
                       int sharers = 1);
void emit_write_ffn(FFNBuilder& f, const TapeLayout& l, const std::string& dst, const std::string& stage, double C,
                    int sharers = 1);
// Zeroes a block on non-scratch columns; values on scratch must stay below C.
void emit_offscratch_clear(FFNBuilder& f, const TapeLayout& l, const std::string& block, double C);
std::vector<int> block_rows(const TapeLayout& l, const std::string& block);
void emit_snap(FFNBuilder& f, int row, double eps);
// counter <- flag ? target : inc, with residual cancel of counter. `one` = 1 where active.
void emit_mux(FFNBuilder& f, const std::vector<int>& counter, const std::vector<int>& inc,
              const std::vector<int>& target, int flag_row, const Lin& one);

}  // namespace lf
