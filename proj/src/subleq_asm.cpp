#include "loopformer/subleq.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>
#include <sstream>

namespace lf {

namespace {

struct Operand {
    bool numeric = false;
    int64_t number = 0;
    std::string name;
};

struct PendingInstr {
    Operand a, b, c;
    bool has_c = false;
    int line = 0;
};

[[noreturn]] void parse_error(int line, const std::string& msg) {
    fail(ErrorCode::Parse, "line " + std::to_string(line) + ": " + msg);
}

bool is_number(const std::string& t) {
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
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.')) return false;
    return true;
}

Operand operand(const std::string& t, int line) {
    Operand o;
    if (is_number(t)) {
        o.numeric = true;
        o.number = std::stoll(t);
    } else if (is_ident(t)) {
        o.name = t;
    } else {
        parse_error(line, "bad operand '" + t + "'");
    }
    return o;
}

std::string upper(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return s;
}

bool is_reserved_cell(const std::string& n, int* cell) {
    std::string u = upper(n);
    if (u == "Z" || u == "ZERO") {
        *cell = 0;
        return true;
    }
    if (u == "NEG") {
        *cell = 1;
        return true;
    }
    return false;
}

}  // namespace

SubleqProgram parse_subleq(const std::string& text, int s) {
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    std::vector<PendingInstr> code;
    std::map<std::string, int> labels;
    std::map<std::string, int> label_line;
    struct MemDirective {
        Operand where;
        int64_t value;
        int line;
    };
    std::vector<MemDirective> mems;

    while (std::getline(in, raw)) {
        ++line_no;
        auto semi = raw.find(';');
        if (semi != std::string::npos) raw.resize(semi);
        std::istringstream ls(raw);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        // leading labels
        while (!tok.empty() && tok[0].size() > 1 && tok[0].back() == ':') {
            std::string name = tok[0].substr(0, tok[0].size() - 1);
            if (!is_ident(name)) parse_error(line_no, "bad label '" + name + "'");
            if (labels.count(name))
                parse_error(line_no, "label '" + name + "' already defined on line " + std::to_string(label_line[name]));
            labels[name] = static_cast<int>(code.size());
            label_line[name] = line_no;
            tok.erase(tok.begin());
        }
        if (tok.empty()) continue;
        const std::string op = upper(tok[0]);
        if (op == ".MEM") {
            if (tok.size() != 3 || !is_number(tok[2])) parse_error(line_no, "expected '.mem <addr|name> <value>'");
            mems.push_back({operand(tok[1], line_no), std::stoll(tok[2]), line_no});
        } else if (op == ".SCRATCH") {
            if (tok.size() != 2 || !is_number(tok[1]) || std::stoll(tok[1]) < 1)
                parse_error(line_no, "expected '.scratch <width>'");
            s = static_cast<int>(std::stoll(tok[1]));
        } else if (op == "SUBLEQ") {
            if (tok.size() != 3 && tok.size() != 4) parse_error(line_no, "SUBLEQ takes 2 or 3 operands");
            PendingInstr pi;
            pi.line = line_no;
            pi.a = operand(tok[1], line_no);
            pi.b = operand(tok[2], line_no);
            if (tok.size() == 4) {
                pi.c = operand(tok[3], line_no);
                pi.has_c = true;
            }
            code.push_back(pi);
        } else {
            parse_error(line_no, "unknown mnemonic '" + tok[0] + "'");
        }
    }

    SubleqProgram p;
    p.s = s;
    // numeric cells claim their slots first; names fill the free ones from cell 2 on
    std::set<int> numeric_cells;
    std::vector<std::pair<std::string, int>> names;  // in first-use order
    auto note = [&](const Operand& o, int line) {
        if (o.numeric) {
            int64_t cell = o.number - 1 - s;
            if (cell < 0) parse_error(line, "address " + std::to_string(o.number) + " is not a memory column");
            numeric_cells.insert(static_cast<int>(cell));
        } else {
            int rc;
            if (is_reserved_cell(o.name, &rc)) return;
            for (auto& nm : names)
                if (nm.first == o.name) return;
            names.push_back({o.name, line});
        }
    };
    for (const auto& md : mems) note(md.where, md.line);
    for (const auto& pi : code) {
        note(pi.a, pi.line);
        note(pi.b, pi.line);
    }
    std::map<std::string, int> cell_of;
    int next = 2;
    for (auto& nm : names) {
        if (labels.count(nm.first)) parse_error(nm.second, "'" + nm.first + "' is a label, not a memory cell");
        while (numeric_cells.count(next)) ++next;
        cell_of[nm.first] = next++;
    }
    int m = 2;
    if (!numeric_cells.empty()) m = std::max(m, *numeric_cells.rbegin() + 1);
    for (auto& kv : cell_of) m = std::max(m, kv.second + 1);
    p.memory.assign(m, 0);
    p.memory[1] = -1;
    p.cell_names = cell_of;

    auto cell = [&](const Operand& o) {
        if (o.numeric) return static_cast<int>(o.number - 1 - s);
        int rc;
        if (is_reserved_cell(o.name, &rc)) return rc;
        return cell_of.at(o.name);
    };
    for (const auto& md : mems) {
        int k = cell(md.where);
        if (k < 2) parse_error(md.line, "cells " + std::to_string(s + 1) + " and " + std::to_string(s + 2) + " are reserved");
        p.memory[k] = md.value;
    }
    const int K = static_cast<int>(code.size());
    for (int k = 0; k < K; ++k) {
        const auto& pi = code[k];
        SubleqInstruction ins;
        ins.a = cell(pi.a);
        ins.b = cell(pi.b);
        if (!pi.has_c) {
            ins.c = k + 1;
        } else if (pi.c.numeric) {
            int64_t idx = pi.c.number - 1 - s - m;
            if (idx < 0 || idx > K) parse_error(pi.line, "jump target " + std::to_string(pi.c.number) + " is not an instruction column");
            ins.c = static_cast<int>(idx);
        } else {
            std::string u = upper(pi.c.name);
            if (u == "EOF" || u == "HALT") {
                ins.c = K;
            } else {
                auto it = labels.find(pi.c.name);
                if (it == labels.end()) parse_error(pi.line, "undefined label '" + pi.c.name + "'");
                ins.c = it->second;
            }
        }
        p.instructions.push_back(ins);
    }
    for (auto& kv : labels)
        if (kv.second > K) fail(ErrorCode::Internal, "label past end");
    return p;
}

std::string format_subleq(const SubleqProgram& p) {
    std::ostringstream o;
    std::map<int, std::string> name_of;
    for (auto& kv : p.cell_names) name_of[kv.second] = kv.first;
    if (p.s != 1) o << ".scratch " << p.s << "\n";
    auto addr = [&](int cell) -> std::string {
        if (cell == 0) return "Z";
        if (cell == 1) return "NEG";
        auto it = name_of.find(cell);
        if (it != name_of.end()) return it->second;
        return std::to_string(p.cell_column(cell) + 1);
    };
    for (int k = 2; k < p.m(); ++k) o << ".mem " << addr(k) << " " << p.memory[k] << "\n";
    for (int k = 0; k < p.num_instructions(); ++k) {
        const auto& in = p.instructions[k];
        o << "i" << k << ": SUBLEQ " << addr(in.a) << " " << addr(in.b) << " ";
        if (in.c == p.eof_index())
            o << "HALT";
        else
            o << "i" << in.c;
        o << "\n";
    }
    return o.str();
}

namespace {

const char* kHandWritten[][2] = {
    {"eof_only", ""},
    {"clear", R"(.mem x 7
SUBLEQ x x HALT
)"},
    {"copy", R"(; y := x through t = -x
.mem x 5
.mem y -3
.mem t 0
SUBLEQ y y
SUBLEQ t t
SUBLEQ x t
SUBLEQ t y HALT
)"},
    {"add", R"(; y += x
.mem x 6
.mem y 9
.mem t 0
SUBLEQ t t
SUBLEQ x t
SUBLEQ t y HALT
)"},
    {"max_xy", R"(; r := max(x, y)
.mem x 5
.mem y 9
.mem r 0
.mem t 0
.mem u 0
    SUBLEQ t t
    SUBLEQ u u
    SUBLEQ y u
    SUBLEQ u t
    SUBLEQ x t xbig
    SUBLEQ r r
    SUBLEQ u r
    SUBLEQ Z Z HALT
xbig:
    SUBLEQ r r
    SUBLEQ u u
    SUBLEQ x u
    SUBLEQ u r HALT
)"},
    {"max_yx", R"(.mem x 11
.mem y -4
.mem r 0
.mem t 0
.mem u 0
    SUBLEQ t t
    SUBLEQ u u
    SUBLEQ y u
    SUBLEQ u t
    SUBLEQ x t xbig
    SUBLEQ r r
    SUBLEQ u r
    SUBLEQ Z Z HALT
xbig:
    SUBLEQ r r
    SUBLEQ u u
    SUBLEQ x u
    SUBLEQ u r HALT
)"},
    {"multiply", R"(; r := x * y by repeated addition, y > 0
.mem x 3
.mem y 4
.mem r 0
.mem one 1
.mem t 0
loop:
    SUBLEQ t t
    SUBLEQ x t
    SUBLEQ t r
    SUBLEQ one y done
    SUBLEQ Z Z loop
done:
    SUBLEQ Z Z HALT
)"},
    {"countdown", R"(; n decreases by 2 until it is no longer positive
.mem n 9
.mem two 2
loop:
    SUBLEQ two n HALT
    SUBLEQ Z Z loop
)"},
};

SubleqProgram random_program(std::mt19937_64& rng, int n_instr) {
    SubleqProgram p;
    std::uniform_int_distribution<int> cells(3, 6), val(-6, 6);
    const int extra = cells(rng);
    for (int k = 0; k < extra; ++k) p.memory.push_back(val(rng));
    const int m = p.m();
    std::uniform_int_distribution<int> any_cell(0, m - 1), writable(2, m - 1), target(0, n_instr);
    for (int k = 0; k < n_instr; ++k) p.instructions.push_back({any_cell(rng), writable(rng), target(rng)});
    return p;
}

}  // namespace

std::vector<CorpusEntry> subleq_corpus(uint64_t seed, int n_random, int n_bits, int steps) {
    std::vector<CorpusEntry> out;
    for (const auto& hw : kHandWritten) out.push_back({hw[0], parse_subleq(hw[1])});
    std::mt19937_64 rng(seed);
    int made = 0, tries = 0;
    while (made < n_random) {
        if (++tries > 100000) fail(ErrorCode::Internal, "could not generate the random corpus");
        SubleqProgram p = random_program(rng, 8);
        try {
            run_subleq_reference(p, steps, {n_bits, true});
        } catch (const Error&) {
            continue;  // overflows within the budget
        }
        out.push_back({"random_" + std::to_string(made), p});
        ++made;
    }
    return out;
}

}  // namespace lf
