#pragma once
// Program library: FLEQ sources plus classical oracles.

#include "loopformer/fleq.hpp"
#include "loopformer/sigmoid_fit.hpp"

#include <map>
#include <string>
#include <vector>

namespace lf {

// sqrt(1 / (((a + b) - c) d)) / 100
struct CalculatorFits {
    double eps_inv = 0.05, delta = 0.1, C = 10.0;
    double eps_sqrt = 0.05, C_sqrt = 16.0;
    double eps_lin = 1e-4;
};

// Which registry a .fleq file runs against, written as a directive:
//   .registry sgd d=4 eps=1e-6 bound=2 product=3 step=4
// Unknown keys are errors; missing keys keep their defaults.
struct RegistrySpec {
    std::string name = "linalg";  // linalg | calculator | sgd | nn
    RegistryOptions opts;
    CalculatorFits fits;
    int step = 0;  // pointer step for sgd and nn; 0 means d
    double tolerance = 0.0;  // total deviation allowed over a run; 0 means 1e-3
};
RegistrySpec registry_spec_from_source(const std::string& fleq_text);
std::string registry_directive(const RegistrySpec& r);
FunctionRegistry make_registry(const RegistrySpec& r);

struct ProgramTemplate {
    std::string name;
    RegistrySpec spec;
    FunctionRegistry registry;
    std::string source;  // .fleq text
    FleqProgram program;
    int cycles = 0;          // reference steps until the EOF instruction
    double eps_total = 1e-3; // tolerance over the whole run
    std::vector<std::string> outputs;
    std::map<std::string, Matrix> oracle;  // classical values of the outputs
    std::vector<Matrix> history;           // classical iterates of the main variable
};

// Reference-run the program and fill `cycles`; throws if it does not reach EOF.
void finish_template(ProgramTemplate& t, int max_steps = 200000);

double calculator_exact(double a, double b, double c, double d);
// fit_inverse eps + fit_sqrt eps + 10 x linearization eps
double calculator_budget(const CalculatorFits& f);
ProgramTemplate program_calculator(double a, double b, double c, double d, const CalculatorFits& f = {});
ProgramTemplate program_calculator(double a, double b, double c, double d, const CalculatorFits& f,
                                   const SigmoidSum& inv, const SigmoidSum& sq);

std::vector<Matrix> newton_inverse_oracle(const Matrix& A, int T, double eps_init);
ProgramTemplate program_matrix_inverse(const Matrix& A, int T, double eps_init);

struct PowerOracle {
    Vector b;                 // plain-loop result of the same iteration
    Vector top;               // dominant eigenvector (unit, sign of b)
    double gap_ratio = 0.0;   // |lambda_2| / |lambda_1|
    bool degenerate = false;  // no strictly dominant eigenvalue
    std::vector<double> newton_error;  // |x_k sqrt(S) - 1| along the first inner loop
    double product_max = 0.0;          // largest matmul result seen
};
PowerOracle power_iteration_oracle(const Matrix& A, int T_outer, int T_inner, const Vector& b0, double x0);
// T_outer = 0 picks ceil(log(eps / 4) / log(gap ratio)) + 2 for eps = 1e-2.
ProgramTemplate program_power_iteration(const Matrix& A, int T_outer, int T_inner);

// X is D x dim (one point per row); squared loss, per-sample updates.
Vector sgd_linear_oracle(const Matrix& X, const Vector& y, double eta, int T, const Vector& w0);
ProgramTemplate program_sgd_linear(const Matrix& X, const Vector& y, double eta, int T, const Vector& w0 = {});

// 2-layer net o = W2 sigma(W1 x + b1) + b2, loss (o - y)^2 / 2.
struct TwoLayerNet {
    Matrix W1;  // m x n0
    Vector b1;  // m
    Matrix W2;  // 1 x m
    double b2 = 0.0;
};
struct NetGrads {
    Matrix dW1;
    Vector db1;
    Matrix dW2;
    double db2 = 0.0;
};
double net_output(const TwoLayerNet& net, const Vector& x);
double net_loss(const TwoLayerNet& net, const Vector& x, double y);
NetGrads backprop_oracle(const TwoLayerNet& net, const Vector& x, double y);
TwoLayerNet sgd_step(const TwoLayerNet& net, const NetGrads& g, double eta);
TwoLayerNet sgd_nn_oracle(TwoLayerNet net, const Matrix& X, const Vector& y, double eta, int T);
// Weights as stored by the program (W1 transposed, W2 as a column).
TwoLayerNet net_from_image(const FleqProgram& p, const Matrix& data);

ProgramTemplate program_backprop(const TwoLayerNet& net, const Vector& x, double y, double eta);
ProgramTemplate program_sgd_nn(const TwoLayerNet& net, const Matrix& X, const Vector& y, double eta, int T);

// Named instances for the CLI: calculator, inverse, power, sgd_linear, backprop, sgd_nn.
// Seed 0 gives the worked example; other seeds draw random in-domain inputs.
std::vector<std::string> template_names();
ProgramTemplate example_template(const std::string& name, uint64_t seed);

}  // namespace lf
