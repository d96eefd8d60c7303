#include "loopformer/serialize.hpp"

namespace lf {

Json to_json(const Matrix& m) {
    Json rows = Json::array();
    for (int i = 0; i < m.rows(); ++i) {
        Json r = Json::array();
        for (int j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

Matrix matrix_from_json(const Json& j) {
    if (!j.is_array()) fail(ErrorCode::Parse, "matrix must be an array of rows");
    const int r = static_cast<int>(j.size());
    const int c = r ? static_cast<int>(j[0].size()) : 0;
    Matrix m(r, c);
    for (int i = 0; i < r; ++i) {
        if (!j[i].is_array() || static_cast<int>(j[i].size()) != c) fail(ErrorCode::Parse, "ragged matrix");
        for (int k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

Json to_json(const TapeLayout& l) {
    Json rows = Json::array(), secs = Json::array();
    for (const auto& b : l.rows.blocks()) rows.push_back({{"name", b.name}, {"offset", b.offset}, {"height", b.height}});
    for (const auto& s : l.sections) secs.push_back({{"name", s.name}, {"offset", s.offset}, {"width", s.width}});
    return {{"width", l.rows.width()}, {"n", l.n}, {"scratch", l.scratch()}, {"rows", rows}, {"sections", secs}};
}

Json to_json(const SigmoidSum& s) {
    Json terms = Json::array();
    for (const auto& t : s.terms) terms.push_back({t.c, t.a, t.b});
    Json bands = Json::array();
    for (const auto& [lo, hi] : s.bands) bands.push_back({lo, hi});
    return {{"name", s.name}, {"lo", s.lo},     {"hi", s.hi},       {"eps", s.eps},
            {"kappa", s.kappa}, {"intervals", s.intervals}, {"terms", terms}, {"bands", bands}};
}

Json to_json(const std::vector<ManifestEntry>& m) {
    Json out = Json::array();
    for (const auto& e : m) out.push_back({{"name", e.name}, {"layers", e.l}, {"heads", e.h}, {"rows", e.r}, {"scratch", e.s}});
    return out;
}

Json to_json(const SubleqProgram& p) {
    Json code = Json::array();
    for (const auto& in : p.instructions) code.push_back({in.a, in.b, in.c});
    Json names = Json::object();
    for (const auto& [n, c] : p.cell_names) names[n] = c;
    return {{"s", p.s}, {"memory", p.memory}, {"instructions", code}, {"names", names}};
}

Json to_json(const MachineState& s) {
    return {{"cycle", s.cycle}, {"pc", s.pc}, {"flag", s.flag}, {"memory", s.memory}};
}

Json to_json(const MachineTrace& t) {
    Json states = Json::array();
    for (const auto& s : t.states) states.push_back(to_json(s));
    return {{"halted", t.halted}, {"states", states}};
}

Json to_json(const FleqInstruction& in) { return {in.a, in.b, in.c, in.m, in.flag, in.p, in.dh, in.dw}; }

Json to_json(const FleqProgram& p) {
    Json vars = Json::array(), code = Json::array(), labels = Json::object();
    for (const auto& v : p.vars)
        vars.push_back({{"name", v.name}, {"addr", v.addr}, {"rows", v.rows}, {"cols", v.cols},
                        {"value", to_json(p.value(v.name, p.data))}});
    for (const auto& in : p.code) code.push_back(to_json(in));
    for (const auto& [n, k] : p.labels) labels[n] = k;
    return {{"d", p.d}, {"data_size", p.data_size()}, {"vars", vars}, {"labels", labels}, {"code", code}};
}

Json to_json(const FleqProgram& p, const FleqState& s) {
    Json vars = Json::object(), code = Json::array();
    for (const auto& v : p.vars) vars[v.name] = to_json(p.value(v.name, s.data));
    for (const auto& in : s.code) code.push_back(to_json(in));
    return {{"cycle", s.cycle}, {"pc", s.pc}, {"vars", vars}, {"code", code}};
}

Json to_json(const FleqProgram& p, const FleqTrace& t) {
    Json states = Json::array();
    for (const auto& s : t.states) states.push_back(to_json(p, s));
    return {{"halted", t.halted}, {"states", states}};
}

Json oracle_json(const ProgramTemplate& t) {
    Json outputs = Json::object(), hist = Json::array();
    for (const auto& [n, m] : t.oracle) outputs[n] = to_json(m);
    for (const auto& m : t.history) hist.push_back(to_json(m));
    return {{"name", t.name},
            {"registry", t.spec.name},
            {"cycles", t.cycles},
            {"eps_total", t.eps_total},
            {"outputs", t.outputs},
            {"oracle", outputs},
            {"history", hist},
            {"reference", to_json(t.program, run_fleq_reference(t.program, t.registry, t.cycles))}};
}

std::string dump(const Json& j) { return j.dump(1) + "\n"; }

}  // namespace lf
