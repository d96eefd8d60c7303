// loopformer: assemble, run and sweep looped-transformer programs.
// Talks to the library through the C API only.
//
// Exit codes: 0 ok, 1 parse error, 2 validation error, 3 deviation, 4 runtime failure.

#include "loopformer.h"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace {

int exit_code(lf_status s) {
    switch (s) {
        case LF_OK: return 0;
        case LF_ERR_PARSE: return 1;
        case LF_ERR_VALIDATION:
        case LF_ERR_ARGUMENT: return 2;
        case LF_ERR_DEVIATION: return 3;
        default: return 4;
    }
}

struct Failure {
    lf_status status;
    std::string msg;
};

// Takes ownership of a C string.
std::string take(char* s) {
    std::string out = s ? s : "";
    lf_string_free(s);
    return out;
}

void check(lf_status s, const std::string& where) {
    if (s != LF_OK) throw Failure{s, where + ": " + lf_last_error()};
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure{LF_ERR_VALIDATION, "cannot open " + path};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text)) throw Failure{LF_ERR_VALIDATION, "cannot write " + path};
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") std::cout << text;
    else write_file(path, text);
}

lf_kind kind_of(const std::string& path, const std::string& kind) {
    if (kind == "subleq") return LF_SUBLEQ;
    if (kind == "fleq") return LF_FLEQ;
    auto ends = [&](const char* ext) {
        std::string e = ext;
        return path.size() >= e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0;
    };
    if (ends(".fleq")) return LF_FLEQ;
    if (ends(".sl") || ends(".subleq")) return LF_SUBLEQ;
    throw Failure{LF_ERR_VALIDATION, path + ": cannot tell the program kind; pass --kind"};
}

struct Program {
    lf_program* p = nullptr;
    Program() = default;
    Program(const Program&) = delete;
    Program& operator=(const Program&) = delete;
    ~Program() { lf_program_free(p); }
};

void load(Program& prog, const std::string& path, const std::string& kind, int bits) {
    check(lf_program_parse(kind_of(path, kind), read_file(path).c_str(), bits, &prog.p), path);
}

uint64_t env_seed(uint64_t fallback) {
    const char* s = std::getenv("LOOPFORMER_SEED");
    if (!s || !*s) return fallback;
    char* end = nullptr;
    unsigned long long v = std::strtoull(s, &end, 10);
    if (*end) throw Failure{LF_ERR_VALIDATION, "LOOPFORMER_SEED must be an unsigned integer"};
    return v;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct RunArgs {
    std::vector<std::string> files;
    std::string kind = "auto", mode = "hardmax", lambda = "auto", dump;
    double eps = 0.0;
    int bits = 16, cycles = 0, jobs = 1;
    bool oracle = false, diff = false;
};

struct RunResult {
    lf_status status = LF_OK;
    std::string line, dump;
};

RunResult run_one(const RunArgs& a, const std::string& path) {
    RunResult res;
    try {
        Program prog;
        load(prog, path, a.kind, a.bits);
        if (a.oracle) {
            char* js = nullptr;
            check(lf_program_oracle_json(prog.p, &js), path);
            res.dump = take(js);
            res.line = path + ": oracle written";
            return res;
        }
        lf_run_config cfg;
        lf_run_config_init(&cfg);
        cfg.mode = a.mode == "softmax" ? LF_SOFTMAX : LF_HARDMAX;
        cfg.lambda = a.lambda == "auto" ? 0.0 : std::stod(a.lambda);
        cfg.eps = a.eps;
        cfg.cycles = a.cycles;
        cfg.compare = a.diff ? 1 : 0;
        lf_run* r = nullptr;
        lf_status s = lf_run_program(prog.p, &cfg, &r);
        if (!r) check(s, path);
        std::string err = s == LF_OK ? "" : lf_last_error();
        std::ostringstream line;
        line << path << ": cycles=" << lf_run_cycles(r) << " halted=" << (lf_run_halted(r) ? "yes" : "no");
        if (cfg.mode == LF_SOFTMAX) line << " lambda=" << num(lf_run_lambda(r));
        if (a.diff)
            line << " max_deviation=" << num(lf_run_max_deviation(r)) << " bound=" << num(lf_run_bound(r))
                 << " control=" << (lf_run_control_match(r) ? "match" : "MISMATCH");
        if (!err.empty()) line << "\n  " << err;
        res.line = line.str();
        if (!a.dump.empty()) {
            char* js = nullptr;
            lf_status ds = a.diff ? lf_run_diff_json(r, &js) : lf_run_trace_json(r, &js);
            if (ds != LF_OK) {
                lf_run_free(r);
                check(ds, path);
            }
            res.dump = take(js);
        }
        lf_run_free(r);
        res.status = s;
    } catch (const Failure& f) {
        res.status = f.status;
        res.line = f.msg;
    } catch (const std::exception& e) {
        res.status = LF_ERR_VALIDATION;
        res.line = path + ": " + e.what();
    }
    return res;
}

int cmd_run(const RunArgs& a) {
    if (!a.dump.empty() && a.files.size() > 1) throw Failure{LF_ERR_VALIDATION, "--dump takes a single program"};
    std::vector<RunResult> results(a.files.size());
    const int jobs = std::max(1, std::min<int>(a.jobs, static_cast<int>(a.files.size())));
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
        pool.emplace_back([&, w] {
            for (size_t i = w; i < a.files.size(); i += jobs) results[i] = run_one(a, a.files[i]);
        });
    for (auto& t : pool) t.join();
    int code = 0;
    for (const auto& r : results) {
        (r.status == LF_OK ? std::cout : std::cerr) << r.line << "\n";
        code = std::max(code, exit_code(r.status));
    }
    if (!a.dump.empty() && !results.empty() && !results[0].dump.empty()) write_file(a.dump, results[0].dump);
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Compile SUBLEQ and FLEQ programs into looped transformers and run them"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(lf_version()));

    std::string kind = "auto", dump, file;
    int bits = 16;

    auto* as = app.add_subcommand("assemble", "Print the initial tape and layout as JSON");
    as->add_option("file", file, "Program (.sl / .subleq or .fleq)")->required();
    as->add_option("--kind", kind, "Program kind")->check(CLI::IsMember({"auto", "subleq", "fleq"}));
    as->add_option("--bits", bits, "SUBLEQ integer width")->check(CLI::Range(2, 62));
    as->add_option("--dump", dump, "Write the JSON here instead of stdout");

    RunArgs ra;
    auto* run = app.add_subcommand("run", "Run programs through the transformer");
    run->add_option("files", ra.files, "Programs")->required();
    run->add_option("--kind", ra.kind, "Program kind")->check(CLI::IsMember({"auto", "subleq", "fleq"}));
    run->add_option("--bits", ra.bits, "SUBLEQ integer width")->check(CLI::Range(2, 62));
    run->add_option("--mode", ra.mode, "Attention mode")->check(CLI::IsMember({"hardmax", "softmax"}));
    run->add_option("--lambda", ra.lambda, "Softmax temperature, or auto");
    run->add_option("--eps", ra.eps, "SUBLEQ correction radius or FLEQ total tolerance")->check(CLI::NonNegativeNumber);
    run->add_option("--cycles", ra.cycles, "Cycles to run; default runs to the halt")->check(CLI::NonNegativeNumber);
    run->add_option("--jobs", ra.jobs, "Programs run in parallel")->check(CLI::Range(1, 256));
    run->add_option("--dump", ra.dump, "Write the trace (or the diff with --diff) as JSON");
    run->add_flag("--oracle", ra.oracle, "Only run the reference interpreter");
    run->add_flag("--diff", ra.diff, "Compare against the reference; exit 3 on deviation");

    std::string name, out, oracle_out;
    long long seed = -1;
    auto* em = app.add_subcommand("emit", "Write a built-in FLEQ program and its oracle");
    em->add_option("name", name, "calculator, inverse, power, sgd_linear, backprop or sgd_nn")->required();
    em->add_option("--seed", seed, "Instance seed; 0 is the worked example (default LOOPFORMER_SEED or 0)");
    em->add_option("-o,--out", out, "Where to write the .fleq text");
    em->add_option("--oracle-out", oracle_out, "Where to write the oracle JSON");

    std::string param;
    double lo = 0, hi = 0;
    int steps = 8;
    auto* sw = app.add_subcommand("sweep", "Deviation as a function of lambda, c or C, as CSV");
    sw->add_option("--param", param, "lambda, c or C")->required()->check(CLI::IsMember({"lambda", "c", "C"}));
    sw->add_option("--from", lo, "Lower end")->required();
    sw->add_option("--to", hi, "Upper end")->required();
    sw->add_option("--steps", steps, "Number of points")->check(CLI::Range(1, 10000));
    sw->add_option("--seed", seed, "Operand seed for c and C (default LOOPFORMER_SEED or 1)");
    sw->add_option("file", file, "Program, required for lambda");
    sw->add_option("--kind", kind, "Program kind")->check(CLI::IsMember({"auto", "subleq", "fleq"}));
    sw->add_option("--bits", bits, "SUBLEQ integer width")->check(CLI::Range(2, 62));
    sw->add_option("-o,--out", out, "Where to write the CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*as) {
            Program prog;
            load(prog, file, kind, bits);
            int l = 0, h = 0, w = 0, n = 0;
            check(lf_program_shape(prog.p, &l, &h, &w, &n), file);
            char* js = nullptr;
            check(lf_program_assemble_json(prog.p, &js), file);
            emit(dump, take(js));
            if (!dump.empty())
                std::cout << file << ": layers=" << l << " heads=" << h << " width=" << w << " columns=" << n << "\n";
            return 0;
        }
        if (*run) return cmd_run(ra);
        if (*em) {
            Program prog;
            uint64_t s = seed >= 0 ? static_cast<uint64_t>(seed) : env_seed(0);
            check(lf_program_template(name.c_str(), s, &prog.p), name);
            char* src = nullptr;
            check(lf_program_source(prog.p, &src), name);
            emit(out, take(src));
            if (!oracle_out.empty()) {
                char* js = nullptr;
                check(lf_program_oracle_json(prog.p, &js), name);
                write_file(oracle_out, take(js));
            }
            return 0;
        }
        if (*sw) {
            Program prog;
            if (!file.empty()) load(prog, file, kind, bits);
            uint64_t s = seed >= 0 ? static_cast<uint64_t>(seed) : env_seed(1);
            char* csv = nullptr;
            check(lf_sweep(prog.p, param.c_str(), lo, hi, steps, s, &csv), "sweep");
            emit(out, take(csv));
            return 0;
        }
    } catch (const Failure& f) {
        std::cerr << f.msg << "\n";
        return exit_code(f.status);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 4;
    }
    return 0;
}
