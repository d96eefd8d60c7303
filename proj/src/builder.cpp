#include "loopformer/builder.hpp"

namespace lf {

int RowLayout::add(const std::string& name, int height) {
    if (height < 0) fail(ErrorCode::Internal, "negative row block height: " + name);
    if (index_.count(name)) fail(ErrorCode::Internal, "duplicate row block: " + name);
    index_[name] = blocks_.size();
    blocks_.push_back({name, width_, height});
    width_ += height;
    return width_ - height;
}

const RowBlock& RowLayout::block(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorCode::Internal, "unknown row block: " + name);
    return blocks_[it->second];
}

int RowLayout::row(const std::string& name, int i) const {
    const auto& b = block(name);
    if (i < 0 || i >= b.height) fail(ErrorCode::Internal, "row index out of block " + name);
    return b.offset + i;
}

Lin Lin::row(int r, double w) {
    Lin l;
    l.terms[r] = w;
    return l;
}

Lin& Lin::operator+=(const Lin& o) {
    for (auto [r, w] : o.terms) terms[r] += w;
    c += o.c;
    return *this;
}

Lin& Lin::operator-=(const Lin& o) {
    for (auto [r, w] : o.terms) terms[r] -= w;
    c -= o.c;
    return *this;
}

Lin& Lin::operator*=(double s) {
    for (auto& [r, w] : terms) w *= s;
    c *= s;
    return *this;
}

Lin operator+(Lin a, const Lin& b) { return a += b; }
Lin operator-(Lin a, const Lin& b) { return a -= b; }
Lin operator-(Lin a) { return a *= -1.0; }
Lin operator*(double s, Lin a) { return a *= s; }
Lin operator*(Lin a, double s) { return a *= s; }

void FFNBuilder::relu(const Lin& in, const std::vector<std::pair<int, double>>& out) {
    units_.push_back({in, out});
}

void FFNBuilder::pass(const Lin& x, int out_row, double coef) {
    relu(x, {{out_row, coef}});
    relu(-x, {{out_row, -coef}});
}

void FFNBuilder::clear(int row) { pass(Lin::row(row), row, -1.0); }

void FFNBuilder::clear_block(const RowLayout& l, const std::string& name) {
    const auto& b = l.block(name);
    for (int i = 0; i < b.height; ++i) clear(b.offset + i);
}

void FFNBuilder::gated(const Lin& x, const Lin& closed, int out_row, double coef, double G) {
    relu(x - G * closed, {{out_row, coef}});
    relu(-x - G * closed, {{out_row, -coef}});
}

FeedForward FFNBuilder::build() const {
    FeedForward f;
    const int h = hidden();
    f.w1 = Matrix::Zero(h, width_);
    f.b1 = Vector::Zero(h);
    f.w2 = Matrix::Zero(width_, h);
    f.b2 = Vector::Zero(width_);
    for (int u = 0; u < h; ++u) {
        for (auto [r, w] : units_[u].in.terms) {
            if (r < 0 || r >= width_) fail(ErrorCode::Internal, "feed-forward input row out of range");
            f.w1(u, r) += w;
        }
        f.b1(u) = units_[u].in.c;
        for (auto [r, w] : units_[u].out) {
            if (r < 0 || r >= width_) fail(ErrorCode::Internal, "feed-forward output row out of range");
            f.w2(r, u) += w;
        }
    }
    for (auto [r, v] : b2_) f.b2(r) += v;
    return f;
}

void HeadBuilder::score(const Lin& key, const Lin& query) {
    if (key.c != 0.0 || query.c != 0.0) fail(ErrorCode::Internal, "attention projections are linear");
    keys_.push_back(key);
    queries_.push_back(query);
}

void HeadBuilder::value(int out_row, int in_row, double w) { values_.emplace_back(out_row, in_row, w); }

AttentionHead HeadBuilder::build(std::optional<double> fixed_lambda) const {
    AttentionHead h;
    const int dk = static_cast<int>(keys_.size());
    h.key = Matrix::Zero(dk, width_);
    h.query = Matrix::Zero(dk, width_);
    h.value = Matrix::Zero(width_, width_);
    for (int i = 0; i < dk; ++i) {
        for (auto [r, w] : keys_[i].terms) h.key(i, r) += w;
        for (auto [r, w] : queries_[i].terms) h.query(i, r) += w;
    }
    for (auto [o, i, w] : values_) h.value(o, i) += w;
    h.fixed_lambda = fixed_lambda;
    return h;
}

TransformerLayer embed_layer(const TransformerLayer& l, int width, const std::vector<int>& row_map) {
    const int r = l.width();
    if (static_cast<int>(row_map.size()) != r) fail(ErrorCode::Internal, "row map size mismatch");
    TransformerLayer out;
    out.name = l.name;
    for (const auto& h : l.heads) {
        AttentionHead e;
        e.key = Matrix::Zero(h.key.rows(), width);
        e.query = Matrix::Zero(h.query.rows(), width);
        e.value = Matrix::Zero(width, width);
        for (int c = 0; c < r; ++c) {
            e.key.col(row_map[c]) = h.key.col(c);
            e.query.col(row_map[c]) = h.query.col(c);
        }
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j)
                if (h.value(i, j) != 0.0) e.value(row_map[i], row_map[j]) = h.value(i, j);
        e.fixed_lambda = h.fixed_lambda;
        out.heads.push_back(std::move(e));
    }
    const auto& f = l.ffn;
    out.ffn.w1 = Matrix::Zero(f.w1.rows(), width);
    for (int c = 0; c < r; ++c) out.ffn.w1.col(row_map[c]) = f.w1.col(c);
    out.ffn.b1 = f.b1;
    out.ffn.w2 = Matrix::Zero(width, f.w2.cols());
    out.ffn.b2 = Vector::Zero(width);
    for (int i = 0; i < r; ++i) {
        out.ffn.w2.row(row_map[i]) = f.w2.row(i);
        out.ffn.b2(row_map[i]) = f.b2(i);
    }
    return out;
}

}  // namespace lf
