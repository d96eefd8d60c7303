#pragma once
// Helpers for writing weight matrices by named row blocks.

#include "loopformer/tensor.hpp"

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace lf {

struct RowBlock {
    std::string name;
    int offset = 0;
    int height = 0;
};

class RowLayout {
public:
    int add(const std::string& name, int height);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const RowBlock& block(const std::string& name) const;
    int row(const std::string& name, int i = 0) const;
    int height(const std::string& name) const { return block(name).height; }
    int width() const { return width_; }
    const std::vector<RowBlock>& blocks() const { return blocks_; }

private:
    std::vector<RowBlock> blocks_;
    std::map<std::string, size_t> index_;
    int width_ = 0;
};

// Affine form over tape rows: sum_r w_r * x_r + c.
struct Lin {
    std::map<int, double> terms;
    double c = 0.0;

    Lin() = default;
    Lin(double constant) : c(constant) {}
    static Lin row(int r, double w = 1.0);

    Lin& operator+=(const Lin& o);
    Lin& operator-=(const Lin& o);
    Lin& operator*=(double s);
};

Lin operator+(Lin a, const Lin& b);
Lin operator-(Lin a, const Lin& b);
Lin operator-(Lin a);
Lin operator*(double s, Lin a);
Lin operator*(Lin a, double s);

class FFNBuilder {
public:
    explicit FFNBuilder(int width) : width_(width) {}

    // Adds a hidden unit relu(in) whose output is added to rows with the given weights.
    void relu(const Lin& in, const std::vector<std::pair<int, double>>& out);
    // Output bias (applies to every column).
    void bias(int row, double v) { b2_[row] += v; }

    // out_row += coef * x, realized as relu(x) - relu(-x)
    void pass(const Lin& x, int out_row, double coef = 1.0);
    // out_row -= x_row (zero the row)
    void clear(int row);
    void clear_block(const RowLayout& l, const std::string& name);
    // out_row += coef * x where `closed` is 0, and nothing where closed >= 1 (|x| < G)
    void gated(const Lin& x, const Lin& closed, int out_row, double coef, double G);

    int hidden() const { return static_cast<int>(units_.size()); }
    FeedForward build() const;

private:
    struct Unit {
        Lin in;
        std::vector<std::pair<int, double>> out;
    };
    int width_;
    std::vector<Unit> units_;
    std::map<int, double> b2_;
};

class HeadBuilder {
public:
    explicit HeadBuilder(int width) : width_(width) {}

    // Appends one key/query dimension contributing key(x_i) * query(x_j) to score(i, j).
    void score(const Lin& key, const Lin& query);
    void value(int out_row, int in_row, double w);
    bool empty() const { return keys_.empty(); }
    AttentionHead build(std::optional<double> fixed_lambda = std::nullopt) const;

private:
    int width_;
    std::vector<Lin> keys_, queries_;
    std::vector<std::tuple<int, int, double>> values_;
};

// Places a layer built for a narrower tape into a wider one at the given row map.
TransformerLayer embed_layer(const TransformerLayer& l, int width, const std::vector<int>& row_map);

}  // namespace lf
