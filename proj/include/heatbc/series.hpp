#pragma once

#include <cmath>
#include <vector>

#include "heatbc/common.hpp"

namespace heatbc {

enum class Direction { FP, LP };
enum class ConvergenceMode { Alternating, Monotone, Mixed, Undetermined };

struct QuadratureReport {
    int n_time = 0;
    int n_boundary = 0;
    double grading = 2.0;
};

/// Truncated perturbation series: terms[0] is the free term, terms[i>=1]
/// the signed corrections; partial_sums accumulates them.
struct SeriesResult {
    std::vector<double> terms;
    std::vector<double> partial_sums;
    ConvergenceMode convergence_mode = ConvergenceMode::Undetermined;
    int truncation_order = 0;
    QuadratureReport quadrature_report;
    /// For marginally alternating series (time-integrated Green iteration,
    /// whose boundary kernel has unit mass) the oscillating tail is summed
    /// by the midpoint of the last two partial sums; equals value() when
    /// the plain partial sums converge.
    bool tail_averaged = false;
    double tail_averaged_value = 0.0;

    double value() const { return partial_sums.empty() ? 0.0 : partial_sums.back(); }
    double converged_value() const { return tail_averaged ? tail_averaged_value : value(); }
    double last_term() const { return terms.empty() ? 0.0 : terms.back(); }
};

struct SeriesOptions {
    int max_order = 8;
    double rel_tol = 1e-8;       // stop when |T_i| < rel_tol * |terms[0]|
    bool refine_check = false;   // grid-halving disagreement detection
    double refine_tol = 1e-3;
};

namespace detail {

/// Sign-pattern classifier. Terms below the noise floor are ignored;
/// Mixed is reported for mixed-convexity domains, Undetermined when
/// fewer than 3 informative terms exist.
inline ConvergenceMode classify_mode(const std::vector<double>& terms, double floor_abs,
                                     bool domain_mixed) {
    std::vector<int> signs;
    for (size_t i = 1; i < terms.size(); ++i) {
        if (std::fabs(terms[i]) <= floor_abs) continue;
        signs.push_back(terms[i] > 0 ? 1 : -1);
    }
    if (signs.size() < 3) return ConvergenceMode::Undetermined;
    bool alternating = true, monotone = true;
    for (size_t i = 1; i < signs.size(); ++i) {
        if (signs[i] == signs[i - 1]) alternating = false;
        if (signs[i] != signs[i - 1]) monotone = false;
    }
    if (alternating) return ConvergenceMode::Alternating;
    if (monotone) return ConvergenceMode::Monotone;
    return domain_mixed ? ConvergenceMode::Mixed : ConvergenceMode::Undetermined;
}

inline void finalize_series(SeriesResult& r, double free_term_abs, bool domain_mixed) {
    r.truncation_order = static_cast<int>(r.terms.size()) - 1;
    r.convergence_mode = classify_mode(r.terms, 1e-13 * std::max(1.0, free_term_abs), domain_mixed);
}

/// Throws when |T_i| grows over three consecutive orders.
inline void check_divergence(const std::vector<double>& terms) {
    size_t n = terms.size();
    if (n < 4) return;
    double a = std::fabs(terms[n - 3]), b = std::fabs(terms[n - 2]), c = std::fabs(terms[n - 1]);
    double base = std::fabs(terms[0]);
    if (c > b && b > a && c > 10.0 * base)
        throw SeriesDivergenceSuspected("correction terms growing for 3 consecutive orders");
}

}  // namespace detail
}  // namespace heatbc
