#include "loopformer/tensor.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace lf {

void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

SoftmaxMode SoftmaxMode::softmax(double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) fail(ErrorCode::Validation, "softmax temperature must be positive");
    SoftmaxMode m;
    m.kind = Kind::Softmax;
    m.lambda = lambda;
    return m;
}

std::string SoftmaxMode::describe() const {
    if (is_hardmax()) return "hardmax";
    std::ostringstream os;
    os << "softmax(lambda=" << lambda << ")";
    return os.str();
}

FeedForward FeedForward::identity(int width) {
    FeedForward f;
    f.w1 = Matrix::Zero(0, width);
    f.b1 = Vector::Zero(0);
    f.w2 = Matrix::Zero(width, 0);
    f.b2 = Vector::Zero(width);
    return f;
}

void check_finite(const Matrix& m, const char* where) {
    if (!m.allFinite()) fail(ErrorCode::Numeric, std::string("non-finite value in ") + where);
}

namespace {

// Column-wise softmax/hardmax on a column-major scratch buffer.
void softmax_inplace(Eigen::MatrixXd& s, SoftmaxMode mode) {
    const Eigen::Index n = s.rows();
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
        auto col = s.col(j);
        double mx = col.maxCoeff();
        if (mode.is_hardmax()) {
            double tol = 1e-9 * std::max(1.0, std::abs(mx));
            int ties = 0;
            for (Eigen::Index i = 0; i < n; ++i) ties += (col(i) >= mx - tol);
            double w = 1.0 / ties;
            for (Eigen::Index i = 0; i < n; ++i) col(i) = (col(i) >= mx - tol) ? w : 0.0;
        } else {
            double total = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                double e = std::exp(mode.lambda * (col(i) - mx));
                col(i) = e;
                total += e;
            }
            col /= total;
        }
    }
}

SoftmaxMode head_mode(const std::optional<double>& fixed, SoftmaxMode mode) {
    return fixed ? SoftmaxMode::softmax(*fixed) : mode;
}

}  // namespace

Matrix softmax_columns(const Matrix& m, SoftmaxMode mode) {
    check_finite(m, "softmax input");
    Eigen::MatrixXd s = m;
    softmax_inplace(s, mode);
    return s;
}

Matrix apply_attention(const Matrix& x, const std::vector<AttentionHead>& heads, SoftmaxMode mode) {
    Matrix out = x;
    for (const auto& h : heads) {
        const auto r = x.rows();
        if (h.key.cols() != r || h.query.cols() != r || h.value.cols() != r || h.value.rows() != r)
            fail(ErrorCode::Validation, "attention head width does not match input");
        if (h.key.rows() != h.query.rows()) fail(ErrorCode::Validation, "key/query row mismatch");
        Matrix kx = h.key * x;
        Matrix qx = h.query * x;
        Matrix scores = kx.transpose() * qx;
        Matrix w = softmax_columns(scores, head_mode(h.fixed_lambda, mode));
        out += h.value * x * w;
    }
    return out;
}

Matrix apply_ffn(const Matrix& a, const FeedForward& f) {
    if (f.w1.cols() != a.rows() || f.w2.rows() != a.rows() || f.w2.cols() != f.w1.rows() ||
        f.b1.size() != f.w1.rows() || f.b2.size() != f.w2.rows())
        fail(ErrorCode::Validation, "feed-forward shape mismatch");
    Matrix out = a;
    if (f.w1.rows() > 0) {
        Matrix h = (f.w1 * a).colwise() + f.b1;
        h = h.cwiseMax(0.0);
        out += f.w2 * h;
    }
    out.colwise() += f.b2;
    return out;
}

Matrix apply_layer(const Matrix& x, const TransformerLayer& layer, SoftmaxMode mode) {
    if (layer.ffn.width() != x.rows()) fail(ErrorCode::Validation, "layer width does not match input");
    return apply_ffn(apply_attention(x, layer.heads, mode), layer.ffn);
}

namespace {

// Nonzeros of a dense matrix grouped by row, from one pass over the storage.
struct DenseScan {
    Eigen::Index rows = 0, cols = 0;
    std::vector<std::vector<std::pair<int, double>>> by_row;

    explicit DenseScan(const Matrix& m) : rows(m.rows()), cols(m.cols()), by_row(m.rows()) {
        static_assert(Matrix::IsRowMajor);
        const double* p = m.data();
        for (Eigen::Index i = 0; i < rows; ++i, p += cols)
            for (Eigen::Index j = 0; j < cols; ++j)
                if (p[j] != 0.0) by_row[i].push_back({static_cast<int>(j), p[j]});
    }
    std::vector<int> nonzero_rows() const {
        std::vector<int> r;
        for (Eigen::Index i = 0; i < rows; ++i)
            if (!by_row[i].empty()) r.push_back(static_cast<int>(i));
        return r;
    }
    SparseMatrix gather(const std::vector<int>& keep) const {
        std::vector<Eigen::Triplet<double>> t;
        for (size_t k = 0; k < keep.size(); ++k)
            for (const auto& [j, v] : by_row[keep[k]]) t.emplace_back(static_cast<int>(k), j, v);
        SparseMatrix s(static_cast<Eigen::Index>(keep.size()), cols);
        s.setFromTriplets(t.begin(), t.end());
        s.makeCompressed();
        return s;
    }
    SparseMatrix all() const {
        std::vector<int> every(rows);
        for (Eigen::Index i = 0; i < rows; ++i) every[i] = static_cast<int>(i);
        return gather(every);
    }
};

CompiledLayer compile(const TransformerLayer& l) {
    CompiledLayer c;
    for (const auto& h : l.heads) {
        CompiledHead ch;
        DenseScan key(h.key), query(h.query), value(h.value);
        std::set<int> kq;
        for (int r : key.nonzero_rows()) kq.insert(r);
        for (int r : query.nonzero_rows()) kq.insert(r);
        std::vector<int> kqr(kq.begin(), kq.end());
        ch.key = key.gather(kqr);
        ch.query = query.gather(kqr);
        ch.value_rows = value.nonzero_rows();
        ch.value = value.gather(ch.value_rows);
        ch.fixed_lambda = h.fixed_lambda;
        c.heads.push_back(std::move(ch));
    }
    DenseScan w1(l.ffn.w1), w2(l.ffn.w2);
    c.w1 = w1.all();
    c.b1 = l.ffn.b1;
    c.w2 = w2.all();
    c.b2 = l.ffn.b2;
    std::set<int> outs;
    for (int r : w2.nonzero_rows()) outs.insert(r);
    for (Eigen::Index i = 0; i < l.ffn.b2.size(); ++i)
        if (l.ffn.b2(i) != 0.0) outs.insert(static_cast<int>(i));
    c.out_rows.assign(outs.begin(), outs.end());
    c.w2_rows = w2.gather(c.out_rows);
    return c;
}

Matrix run_compiled(const Matrix& x, const CompiledLayer& c, SoftmaxMode mode) {
    Matrix a = x;
    for (const auto& h : c.heads) {
        if (h.value_rows.empty()) continue;
        Eigen::MatrixXd kx = h.key * x;
        Eigen::MatrixXd qx = h.query * x;
        Eigen::MatrixXd s = kx.transpose() * qx;
        if (!s.allFinite()) fail(ErrorCode::Numeric, "non-finite attention scores");
        softmax_inplace(s, head_mode(h.fixed_lambda, mode));
        Eigen::MatrixXd vx = h.value * x;
        Eigen::MatrixXd upd = vx * s;
        for (size_t i = 0; i < h.value_rows.size(); ++i) a.row(h.value_rows[i]) += upd.row(i);
    }
    Matrix out = a;
    if (c.w1.rows() > 0 && !c.out_rows.empty()) {
        Eigen::MatrixXd h = c.w1 * a;
        h.colwise() += c.b1;
        h = h.cwiseMax(0.0);
        Eigen::MatrixXd upd = c.w2_rows * h;
        for (size_t i = 0; i < c.out_rows.size(); ++i) out.row(c.out_rows[i]) += upd.row(i);
    }
    for (int r : c.out_rows) out.row(r).array() += c.b2(r);
    return out;
}

}  // namespace

TransformerStack::TransformerStack(int width, std::vector<TransformerLayer> layers)
    : width_(width), layers_(std::move(layers)) {
    for (size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.width() != width_) fail(ErrorCode::Validation, "layer " + std::to_string(i) + " width mismatch");
        for (const auto& h : l.heads)
            if (h.width() != width_ || h.key.cols() != width_ || h.query.cols() != width_ ||
                h.value.rows() != width_ || h.key.rows() != h.query.rows())
                fail(ErrorCode::Validation, "layer " + std::to_string(i) + " head shape mismatch");
        if (l.ffn.w1.cols() != width_ || l.ffn.w2.cols() != l.ffn.w1.rows() || l.ffn.b1.size() != l.ffn.w1.rows() ||
            l.ffn.b2.size() != width_)
            fail(ErrorCode::Validation, "layer " + std::to_string(i) + " feed-forward shape mismatch");
        compiled_.push_back(compile(l));
    }
}

int TransformerStack::max_heads() const {
    size_t m = 0;
    for (const auto& l : layers_) m = std::max(m, l.heads.size());
    return static_cast<int>(m);
}

Matrix TransformerStack::forward_range(const Matrix& x, SoftmaxMode mode, int from, int to) const {
    if (x.rows() != width_) fail(ErrorCode::Validation, "tape height does not match stack width");
    Matrix cur = x;
    for (int i = from; i < to; ++i) cur = run_compiled(cur, compiled_[i], mode);
    return cur;
}

Matrix TransformerStack::forward(const Matrix& x, SoftmaxMode mode) const {
    return forward_range(x, mode, 0, num_layers());
}

Matrix loop_execute(const TransformerStack& stack, const Matrix& x, int t, SoftmaxMode mode,
                    const CycleObserver& observer, LoopOptions opts) {
    if (t < 0) fail(ErrorCode::Validation, "cycle count must be non-negative");
    Matrix cur = x;
    for (int c = 0; c < t; ++c) {
        cur = stack.forward(cur, mode);
        check_finite(cur, "tape");
        double mx = cur.cwiseAbs().maxCoeff();
        if (mx > opts.magnitude_guard)
            fail(ErrorCode::Numeric, "tape magnitude guard exceeded at cycle " + std::to_string(c + 1));
        if (observer) observer(c + 1, cur);
    }
    return cur;
}

}  // namespace lf
