#include "loopformer/fleq.hpp"

#include <cctype>
#include <cstdio>
#include <set>
#include <sstream>

namespace lf {

namespace {

[[noreturn]] void parse_error(int line, const std::string& msg) {
    fail(ErrorCode::Parse, "line " + std::to_string(line) + ": " + msg);
}

bool is_int(const std::string& t) {
    if (t.empty()) return false;
    size_t i = (t[0] == '-' || t[0] == '+') ? 1 : 0;
    if (i == t.size()) return false;
    for (; i < t.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(t[i]))) return false;
    return true;
}

bool is_ident(const std::string& t) {
    if (t.empty() || !(std::isalpha(static_cast<unsigned char>(t[0])) || t[0] == '_')) return false;
    for (char ch : t)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_')) return false;
    return true;
}

double number(const std::string& t, int line) {
    try {
        size_t used = 0;
        double v = std::stod(t, &used);
        if (used == t.size()) return v;
    } catch (const std::exception&) {
    }
    parse_error(line, "bad number '" + t + "'");
}

std::vector<std::string> tokens(const std::string& s) {
    // punctuation of the CALL form becomes whitespace
    std::string t = s;
    for (auto& ch : t)
        if (ch == '(' || ch == ')' || ch == ',' || ch == '=' || ch == '[' || ch == ']') ch = ' ';
    std::istringstream in(t);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

struct Pending {
    std::string op;  // FLEQ, CALL, BLEZ, HALT
    std::vector<std::string> args;
    int line = 0;
};

}  // namespace

FleqProgram parse_fleq(const std::string& text, const FunctionRegistry& reg) {
    const int d = reg.d;
    FleqProgram p;
    p.d = d;
    std::vector<std::vector<double>> cols;  // data image, column by column
    std::set<std::string> names;
    auto add_var = [&](const std::string& name, int rows, int ncols, const std::vector<double>& vals, int line) {
        if (!is_ident(name)) parse_error(line, "bad name '" + name + "'");
        if (!names.insert(name).second) parse_error(line, "duplicate name '" + name + "'");
        if (rows < 1 || ncols < 1 || rows > d || ncols > d)
            parse_error(line, "'" + name + "' must fit in " + std::to_string(d) + " x " + std::to_string(d));
        FleqVariable v{name, static_cast<int>(cols.size()), rows, ncols};
        for (int j = 0; j < d; ++j) {
            std::vector<double> c(d, 0.0);
            for (int i = 0; i < rows && j < ncols; ++i) c[i] = vals.empty() ? 0.0 : vals[i * ncols + j];
            cols.push_back(c);
        }
        p.vars.push_back(v);
    };
    add_var("flag0", 1, 1, {1.0}, 0);
    add_var("neg", 1, 1, {-1.0}, 0);
    for (int k = 2; k < 5; ++k) add_var(kFleqReserved[k], 1, 1, {}, 0);

    std::vector<Pending> prog;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        auto cut = raw.find_first_of(";#");
        if (cut != std::string::npos) raw = raw.substr(0, cut);
        auto colon = raw.find(':');
        if (colon != std::string::npos) {
            std::string lab = raw.substr(0, colon);
            std::istringstream ls(lab);
            std::string l, extra;
            ls >> l;
            if (!is_ident(l) || (ls >> extra)) parse_error(line, "bad label '" + lab + "'");
            if (l == "EOF" || l == "HALT") parse_error(line, "'" + l + "' is reserved");
            if (!names.insert(l).second) parse_error(line, "duplicate name '" + l + "'");
            p.labels[l] = static_cast<int>(prog.size());
            raw = raw.substr(colon + 1);
        }
        auto t = tokens(raw);
        if (t.empty()) continue;
        const std::string op = t[0];
        if (op == ".d") {
            if (t.size() != 2 || !is_int(t[1])) parse_error(line, ".d takes one integer");
            if (std::stoi(t[1]) != d) parse_error(line, "program d differs from the registry d = " + std::to_string(d));
        } else if (op == ".registry") {
            // read by registry_spec_from_source
        } else if (op == ".mem") {
            if (t.size() != 3) parse_error(line, ".mem takes a name and a value");
            add_var(t[1], 1, 1, {number(t[2], line)}, line);
        } else if (op == ".var") {
            if (t.size() != 2 && t.size() != 4) parse_error(line, ".var takes a name and an optional shape");
            int r = 1, c = 1;
            if (t.size() == 4) {
                if (!is_int(t[2]) || !is_int(t[3])) parse_error(line, "bad shape");
                r = std::stoi(t[2]);
                c = std::stoi(t[3]);
            }
            add_var(t[1], r, c, {}, line);
        } else if (op == ".matrix") {
            if (t.size() < 4 || !is_int(t[2]) || !is_int(t[3])) parse_error(line, ".matrix takes name rows cols values");
            int r = std::stoi(t[2]), c = std::stoi(t[3]);
            if (r < 1 || c < 1 || static_cast<int>(t.size()) != 4 + r * c)
                parse_error(line, ".matrix " + t[1] + " needs " + std::to_string(std::max(r * c, 0)) + " values");
            std::vector<double> vals;
            for (size_t i = 4; i < t.size(); ++i) vals.push_back(number(t[i], line));
            add_var(t[1], r, c, vals, line);
        } else if (op == "FLEQ" || op == "CALL" || op == "BLEZ" || op == "HALT") {
            prog.push_back({op, {t.begin() + 1, t.end()}, line});
        } else {
            parse_error(line, "unknown statement '" + op + "'");
        }
    }

    p.data = Matrix::Zero(d, static_cast<int>(cols.size()));
    for (size_t j = 0; j < cols.size(); ++j)
        for (int i = 0; i < d; ++i) p.data(i, j) = cols[j][i];
    const int ds = p.data_size();
    const int eof = static_cast<int>(prog.size());

    auto addr = [&](const std::string& tok, int ln) -> int {
        if (is_int(tok)) return std::stoi(tok);
        std::string base = tok;
        int off = 0;
        auto plus = tok.find('+');
        if (plus != std::string::npos) {
            base = tok.substr(0, plus);
            std::string o = tok.substr(plus + 1);
            if (!is_int(o)) parse_error(ln, "bad offset in '" + tok + "'");
            off = std::stoi(o);
        }
        for (const auto& v : p.vars)
            if (v.name == base) return v.addr + off;
        auto it = p.labels.find(base);
        if (it != p.labels.end()) return ds + it->second + off;
        parse_error(ln, "undefined name '" + base + "'");
    };
    auto target = [&](const std::string& tok, int ln) -> int {
        if (tok == "EOF" || tok == "HALT") return eof;
        if (is_int(tok)) return std::stoi(tok);
        auto it = p.labels.find(tok);
        if (it == p.labels.end()) parse_error(ln, "undefined label '" + tok + "'");
        return it->second;
    };
    auto fn = [&](const std::string& tok, int ln) -> int {
        int m = reg.index(tok);
        if (m < 0 && is_int(tok)) m = std::stoi(tok);
        if (m < 0 || m >= reg.M()) parse_error(ln, "unknown function '" + tok + "' in registry " + reg.name);
        return m;
    };
    auto shape = [&](const std::string& tok, int ln) -> int {
        if (!is_int(tok)) parse_error(ln, "bad operand shape '" + tok + "'");
        return std::stoi(tok);
    };
    const int zero = p.var("a0").addr;
    for (int k = 0; k < eof; ++k) {
        const auto& q = prog[k];
        const auto& a = q.args;
        FleqInstruction in;
        if (q.op == "FLEQ") {
            if (a.size() != 8) parse_error(q.line, "FLEQ takes a b c f flag p dh dw");
            in.a = addr(a[0], q.line);
            in.b = addr(a[1], q.line);
            in.c = addr(a[2], q.line);
            in.m = fn(a[3], q.line);
            in.flag = addr(a[4], q.line);
            in.p = target(a[5], q.line);
            in.dh = shape(a[6], q.line);
            in.dw = shape(a[7], q.line);
        } else if (q.op == "CALL") {
            // one operand means b = b0
            if (a.size() < 3 || a.size() > 6) parse_error(q.line, "CALL takes c = f(a, b) [dh dw]");
            std::vector<std::string> v = a;
            if (v.size() == 3 || v.size() == 5) v.insert(v.begin() + 3, "b0");
            in.c = addr(v[0], q.line);
            in.m = fn(v[1], q.line);
            in.a = addr(v[2], q.line);
            in.b = addr(v[3], q.line);
            in.flag = p.var("flag0").addr;
            in.p = k + 1;
            if (v.size() == 6) {
                in.dh = shape(v[4], q.line);
                in.dw = shape(v[5], q.line);
            } else {
                in.dh = in.dw = 1;
                for (const auto& x : p.vars)
                    if (x.name == v[0]) {
                        in.dh = x.rows;
                        in.dw = x.cols;
                    }
            }
        } else if (q.op == "BLEZ") {
            if (a.size() != 2) parse_error(q.line, "BLEZ takes flag p");
            in.a = in.b = in.c = zero;
            in.flag = addr(a[0], q.line);
            in.p = target(a[1], q.line);
        } else {
            if (!a.empty()) parse_error(q.line, "HALT takes no operands");
            in.a = in.b = in.c = zero;
            in.flag = p.var("neg").addr;
            in.p = eof;
        }
        p.code.push_back(in);
    }
    FleqInstruction end;
    end.a = end.b = end.c = zero;
    end.flag = p.var("neg").addr;
    end.p = eof;
    p.code.push_back(end);
    try {
        p.validate(reg);
    } catch (const Error& e) {
        fail(ErrorCode::Parse, e.what());
    }
    return p;
}

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string format_fleq(const FleqProgram& p, const FunctionRegistry& reg) {
    std::ostringstream out;
    out << "; registry " << reg.name << "\n.d " << p.d << "\n";
    auto reserved = [](const std::string& n) {
        for (const char* r : kFleqReserved)
            if (n == r) return true;
        return false;
    };
    for (const auto& v : p.vars) {
        if (reserved(v.name)) continue;
        out << ".matrix " << v.name << " " << v.rows << " " << v.cols;
        for (int i = 0; i < v.rows; ++i)
            for (int j = 0; j < v.cols; ++j) out << " " << num(p.data(i, v.addr + j));
        out << "\n";
    }
    std::map<int, std::string> label;
    for (const auto& [n, k] : p.labels) label[k] = n;
    for (const auto& in : p.code) {
        for (int x : {in.a, in.b, in.c, in.flag})
            if (x >= p.data_size()) label.emplace(x - p.data_size(), "L" + std::to_string(x - p.data_size()));
        label.emplace(in.p, "L" + std::to_string(in.p));
    }
    label.erase(p.eof());
    auto name = [&](int x) -> std::string {
        if (x >= p.data_size()) {
            auto it = label.find(x - p.data_size());
            return it != label.end() ? it->second : std::to_string(x);
        }
        for (const auto& v : p.vars)
            if (x >= v.addr && x < v.addr + p.d) return x == v.addr ? v.name : v.name + "+" + std::to_string(x - v.addr);
        return std::to_string(x);
    };
    for (int k = 0; k < p.eof(); ++k) {
        const auto& in = p.code[k];
        auto it = label.find(k);
        if (it != label.end()) out << it->second << ": ";
        out << "FLEQ " << name(in.a) << " " << name(in.b) << " " << name(in.c) << " " << reg.blocks[in.m].name << " "
            << name(in.flag) << " " << (in.p == p.eof() ? std::string("EOF") : label.at(in.p)) << " " << in.dh << " "
            << in.dw << "\n";
    }
    return out.str();
}

}  // namespace lf
