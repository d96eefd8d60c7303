#pragma once
// Sums of sigmoids f(x) = sum c_i sigma(a_i x + b_i) and the threshold-partition fits.

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace lf {

double sigmoid(double x);

struct SigmoidTerm {
    double c = 0.0, a = 0.0, b = 0.0;
};

struct SigmoidSum {
    std::string name;
    std::vector<SigmoidTerm> terms;
    double lo = 0.0, hi = 0.0;  // validation domain
    double eps = 0.0;           // target error
    double kappa = 0.0;         // steepness used for the thresholds
    int intervals = 0;          // partition size
    std::vector<std::pair<double, double>> bands;  // excluded from validation

    double operator()(double x) const;
    bool excluded(double x) const;
    // Max |f - target| over an n-point grid (log-spaced if log_grid), skipping bands.
    double max_error(const std::function<double(double)>& target, int points, bool log_grid = false) const;
};

// 1/x on [delta, C]: partition a_{i+1} = a_i (1 + eps a_i), value 1/a_i on each piece.
SigmoidSum fit_inverse(double eps, double delta, double C);
// sqrt(x) on [0, C]: breakpoints i^2 eps^2, value i eps on each piece.
SigmoidSum fit_sqrt(double eps, double C);

// The asymptotic term counts the partitions are compared against.
double inverse_term_scale(double eps, double delta, double C);  // log(1/(eps delta))/(eps delta) + log C
double sqrt_term_scale(double eps, double C);                   // sqrt(C)/eps

// Steepness 50/eps; bands of width 5/kappa.
double default_kappa(double eps);

}  // namespace lf
