#pragma once
// Function blocks: sub-transformers with the A | B | C column contract.
//
// Columns [0,d) hold A, [d,2d) hold B, [2d,3d) receive C; columns past 3d are
// workspace. Rows: "DATA" (operand height) first, then structure rows that are
// constant per column (the template), then workspace rows that are zero between
// uses. Every layer keeps an all-zero tape all-zero (b1 <= 0, b2 = 0), so a block
// that is not selected inside FLEQ stays inert.

#include "loopformer/builder.hpp"
#include "loopformer/sigmoid_fit.hpp"
#include "loopformer/tensor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lf {

// Instruction word rows, shared by the FLEQ tape and the pointer blocks.
struct InsLayout {
    int L = 1;   // pointer code length
    int LM = 1;  // function index code length
    int za() const { return 0; }
    int zb() const { return L; }
    int zc() const { return 2 * L; }
    int zm() const { return 3 * L; }
    int zflag() const { return 3 * L + LM; }
    int zp() const { return 4 * L + LM; }
    int dh() const { return 5 * L + LM; }
    int dw() const { return 5 * L + LM + 1; }
    int height() const { return 5 * L + LM + 2; }
};

enum class BlockKind { Data, Pointer };

struct BlockContext {
    int d = 4;
    int s = 0;        // scratch width; 0 means the block minimum
    int n_total = 0;  // columns taking part in attention; 0 means s
    double value_bound = 1e4;
    InsLayout ins;
};

struct FunctionBlock {
    std::string name;
    BlockKind kind = BlockKind::Data;
    int d = 0, s = 0, n_total = 0;
    RowLayout rows;
    std::vector<std::string> structure;  // row blocks filled from the template
    Matrix templ;                        // rows.width() x s
    std::vector<TransformerLayer> layers;

    int l() const { return static_cast<int>(layers.size()); }
    int h() const;
    int r() const { return rows.width(); }
    int data_height() const { return rows.height("DATA"); }

    // Standalone tape with A and B placed (each data_height x d, zero padded).
    Matrix tape(const Matrix& A, const Matrix& B) const;
    Matrix output(const Matrix& tape) const;  // C columns of DATA
    Matrix run(const Matrix& A, const Matrix& B, SoftmaxMode mode) const;
    void check_inert() const;  // b1 <= 0 and b2 == 0 everywhere
};

using BlockRef = std::function<Matrix(const Matrix& A, const Matrix& B, const InsLayout& ins)>;

struct BlockFactory {
    std::string name;
    BlockKind kind = BlockKind::Data;
    std::function<int(int d)> min_scratch;
    std::function<FunctionBlock(const BlockContext&)> make;
    BlockRef reference;  // exact classical semantics on (data_height x d) operands
};

// Matmul linearization constants.
struct MatmulConstants {
    double c = 1e-3;   // query scale
    double C = 10.0;   // anchor score
};
// c = eps / (4 G^2), C = log(1600 d G / (n_anchor eps)), G = d * entry_bound^2.
MatmulConstants auto_matmul_constants(double eps, int d, double entry_bound, int n_anchor);

enum class MatmulVariant { AtB, BtA, AtA, BtB };
enum class SigmoidVariant { MultiHead, SingleHeadWide };

struct SigmoidBlockOptions {
    SigmoidVariant variant = SigmoidVariant::SingleHeadWide;
    int out_cols = 0;  // output columns supported (wide variant); 0 means d
    double input_bound = 100.0;
};

// Factories. Blocks are built for a context so that s and n_total match the host.
BlockFactory add_block();
BlockFactory sub_block();
BlockFactory matmul_block(MatmulVariant v, double eps, double entry_bound, const std::string& name = "mul");
BlockFactory matmul_block_fixed(MatmulVariant v, MatmulConstants k, const std::string& name = "mul");
BlockFactory percentage_block(double eps, double entry_bound);
BlockFactory transpose_block();
// Selector e_j in A column 0 rows 1..N picks sums[j-1]; B row 0 holds the inputs.
BlockFactory sigmoid_block(std::vector<SigmoidSum> sums, SigmoidBlockOptions opt = {}, const std::string& name = "sigmoid");
// Pointer blocks act on instruction words: C col 0 = A col 0 with fields advanced.
BlockFactory incr_pointer_block(const std::string& name, std::vector<int> field_offsets, int delta);
// C = B, on data (kind Data) or instruction words (kind Pointer).
BlockFactory copy_block(const std::string& name, BlockKind kind);

// Convenience builders for standalone use (s and n_total at the block minimum).
FunctionBlock build_block(const BlockFactory& f, int d, int s = 0, int n_total = 0);

// Exact references.
Matrix ref_matmul(MatmulVariant v, const Matrix& A, const Matrix& B);
double eval_selected(const std::vector<SigmoidSum>& sums, const Matrix& A, double x);

struct ManifestEntry {
    std::string name;
    int l, h, r, s;
};
std::vector<ManifestEntry> block_manifest(const std::vector<BlockFactory>& reg, int d);

}  // namespace lf
