#pragma once
// Dense tensors and the exact transformer forward pass.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lf {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class ErrorCode { Ok = 0, Parse = 1, Validation = 2, Deviation = 3, Numeric = 4, Internal = 5 };

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& msg);

struct SoftmaxMode {
    enum class Kind { Softmax, Hardmax } kind = Kind::Hardmax;
    double lambda = 1.0;

    static SoftmaxMode softmax(double lambda);
    static SoftmaxMode hardmax() { return {}; }
    bool is_hardmax() const { return kind == Kind::Hardmax; }
    std::string describe() const;
};

struct AttentionHead {
    Matrix key;
    Matrix query;
    Matrix value;
    // Heads that emulate a nonlinearity (sigmoid, linearized softmax) run at a
    // pinned temperature regardless of the machine mode.
    std::optional<double> fixed_lambda;

    int width() const { return static_cast<int>(value.cols()); }
};

struct FeedForward {
    Matrix w1;
    Vector b1;
    Matrix w2;
    Vector b2;

    static FeedForward identity(int width);
    int hidden() const { return static_cast<int>(w1.rows()); }
    int width() const { return static_cast<int>(w2.rows()); }
};

struct TransformerLayer {
    std::vector<AttentionHead> heads;
    FeedForward ffn;
    std::string name;

    int width() const { return ffn.width(); }
};

Matrix softmax_columns(const Matrix& m, SoftmaxMode mode);
Matrix apply_attention(const Matrix& x, const std::vector<AttentionHead>& heads, SoftmaxMode mode);
Matrix apply_ffn(const Matrix& a, const FeedForward& ffn);
Matrix apply_layer(const Matrix& x, const TransformerLayer& layer, SoftmaxMode mode);

// Sparse execution form of a layer; built once per stack.
struct CompiledHead {
    SparseMatrix key, query;      // only the nonzero output rows
    SparseMatrix value;           // only the nonzero output rows
    std::vector<int> value_rows;  // target rows of `value`
    std::optional<double> fixed_lambda;
};

struct CompiledLayer {
    std::vector<CompiledHead> heads;
    SparseMatrix w1, w2;
    Vector b1, b2;
    std::vector<int> out_rows;  // rows touched by w2 or b2
    SparseMatrix w2_rows;       // w2 restricted to out_rows
};

class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(int width, std::vector<TransformerLayer> layers);

    int width() const { return width_; }
    int num_layers() const { return static_cast<int>(layers_.size()); }
    int max_heads() const;
    const std::vector<TransformerLayer>& layers() const { return layers_; }

    // One pass through every layer.
    Matrix forward(const Matrix& x, SoftmaxMode mode) const;
    // Apply layers [from, to) only.
    Matrix forward_range(const Matrix& x, SoftmaxMode mode, int from, int to) const;

private:
    int width_ = 0;
    std::vector<TransformerLayer> layers_;
    std::vector<CompiledLayer> compiled_;
};

struct LoopOptions {
    double magnitude_guard = 1e9;
};

using CycleObserver = std::function<void(int cycle, const Matrix& tape)>;

Matrix loop_execute(const TransformerStack& stack, const Matrix& x, int t, SoftmaxMode mode,
                    const CycleObserver& observer = nullptr, LoopOptions opts = {});

void check_finite(const Matrix& m, const char* where);

}  // namespace lf
