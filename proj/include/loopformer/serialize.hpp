#pragma once
// JSON dumps for tapes, traces and fits. Doubles print with 17 significant digits
// so equal values give byte-identical files.

#include "loopformer/blocks.hpp"
#include "loopformer/fleq.hpp"
#include "loopformer/programs.hpp"
#include "loopformer/sigmoid_fit.hpp"
#include "loopformer/subleq.hpp"

#include "json.hpp"

namespace lf {

using Json = nlohmann::ordered_json;

Json to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json to_json(const TapeLayout& l);
Json to_json(const SigmoidSum& s);
Json to_json(const std::vector<ManifestEntry>& m);

Json to_json(const SubleqProgram& p);
Json to_json(const MachineState& s);
Json to_json(const MachineTrace& t);

Json to_json(const FleqInstruction& in);
Json to_json(const FleqProgram& p);
// Variables are listed by name with their current values.
Json to_json(const FleqProgram& p, const FleqState& s);
Json to_json(const FleqProgram& p, const FleqTrace& t);

// Name, cycle count, tolerance, classical outputs and the reference trace.
Json oracle_json(const ProgramTemplate& t);

std::string dump(const Json& j);

}  // namespace lf
