#include "loopformer/sigmoid_fit.hpp"

#include "loopformer/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace lf {

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

double SigmoidSum::operator()(double x) const {
    double s = 0.0;
    for (const auto& t : terms) s += t.c * sigmoid(t.a * x + t.b);
    return s;
}

bool SigmoidSum::excluded(double x) const {
    for (auto [l, h] : bands)
        if (x >= l && x <= h) return true;
    return false;
}

double SigmoidSum::max_error(const std::function<double(double)>& target, int points, bool log_grid) const {
    if (points < 2) fail(ErrorCode::Validation, "grid needs at least two points");
    if (log_grid && lo <= 0) fail(ErrorCode::Validation, "log grid needs a positive domain");
    double worst = 0.0;
    for (int k = 0; k < points; ++k) {
        double u = static_cast<double>(k) / (points - 1);
        double x = log_grid ? lo * std::pow(hi / lo, u) : lo + (hi - lo) * u;
        if (excluded(x)) continue;
        worst = std::max(worst, std::abs((*this)(x) - target(x)));
    }
    return worst;
}

double default_kappa(double eps) { return 50.0 / eps; }

namespace {

// Staircase with value v[i] on [t[i], t[i+1]); one steep sigmoid per breakpoint.
void add_staircase(SigmoidSum& s, const std::vector<double>& t, const std::vector<double>& v) {
    double prev = 0.0;
    for (size_t i = 0; i < t.size(); ++i) {
        const double jump = v[i] - prev;
        prev = v[i];
        if (jump == 0.0) continue;
        s.terms.push_back({jump, s.kappa, -s.kappa * t[i]});
        // steps much taller than eps leave a visible tail; fence them off
        if (std::abs(jump) > s.eps) {
            double w = std::max(5.0, std::log(20.0 * std::abs(jump) / s.eps)) / s.kappa;
            s.bands.push_back({t[i] - w, t[i] + w});
        }
    }
}

}  // namespace

SigmoidSum fit_inverse(double eps, double delta, double C) {
    if (!(eps > 0 && eps <= 1)) fail(ErrorCode::Validation, "inverse fit needs eps in (0, 1]");
    if (!(delta > 0 && delta < C)) fail(ErrorCode::Validation, "inverse fit needs 0 < delta < C");
    SigmoidSum s;
    s.name = "inverse";
    s.lo = delta;
    s.hi = C;
    s.eps = eps;
    s.kappa = default_kappa(eps);
    std::vector<double> t, v;
    double a = delta;
    const size_t limit = 1000000;
    while (a < C) {
        t.push_back(a);
        v.push_back(1.0 / a);
        a = a * (1.0 + eps * a);
        if (t.size() > limit)
            fail(ErrorCode::Validation, "inverse fit needs more than " + std::to_string(limit) + " terms (about " +
                                            std::to_string(inverse_term_scale(eps, delta, C)) + ")");
    }
    s.intervals = static_cast<int>(t.size());
    add_staircase(s, t, v);
    return s;
}

SigmoidSum fit_sqrt(double eps, double C) {
    if (!(eps > 0 && eps <= 1)) fail(ErrorCode::Validation, "sqrt fit needs eps in (0, 1]");
    if (!(C > 0)) fail(ErrorCode::Validation, "sqrt fit needs C > 0");
    SigmoidSum s;
    s.name = "sqrt";
    s.lo = 0.0;
    s.hi = C;
    s.eps = eps;
    s.kappa = default_kappa(eps);
    std::vector<double> t, v;
    for (int i = 1;; ++i) {
        double b = i * i * eps * eps;
        if (b > C) break;
        t.push_back(b);
        v.push_back(i * eps);
    }
    s.intervals = static_cast<int>(t.size()) + 1;  // [0, eps^2) carries the value 0
    add_staircase(s, t, v);
    return s;
}

double inverse_term_scale(double eps, double delta, double C) {
    return std::log(1.0 / (eps * delta)) / (eps * delta) + std::log(C);
}

double sqrt_term_scale(double eps, double C) { return std::sqrt(C) / eps; }

}  // namespace lf
