#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace heatbc {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidParameters : Error { using Error::Error; };
struct NonpositiveTimeInterval : Error { using Error::Error; };
struct CoincidentPoints : Error { using Error::Error; };
struct DimensionTooLow : Error { using Error::Error; };
struct QueryOutsideDomain : Error { using Error::Error; };
struct QuadratureUnderresolved : Error { using Error::Error; };
struct SeriesDivergenceSuspected : Error { using Error::Error; };
struct SupportTruncation : Error { using Error::Error; };
struct ExtrapolationUnstable : Error { using Error::Error; };
struct CollarSelfIntersection : Error { using Error::Error; };
struct ResolutionViolation : Error { using Error::Error; };
struct WeightOverflow : Error { using Error::Error; };
struct InsufficientCandidateSupport : Error { using Error::Error; };
struct OutOfValidityRegion : Error { using Error::Error; };
struct IncompatibleMethods : Error { using Error::Error; };
struct ConfigParse : Error { using Error::Error; };
struct NumericalFailure : Error { using Error::Error; };

/// Spatial point or direction in up to three dimensions. Components beyond
/// the active dimension stay zero; the active dimension lives in the
/// surrounding Domain/ModelParams.
struct Vec {
    std::array<double, 3> c{0.0, 0.0, 0.0};

    Vec() = default;
    Vec(double x) : c{x, 0.0, 0.0} {}
    Vec(double x, double y) : c{x, y, 0.0} {}
    Vec(double x, double y, double z) : c{x, y, z} {}

    double& operator[](int i) { return c[static_cast<size_t>(i)]; }
    double operator[](int i) const { return c[static_cast<size_t>(i)]; }

    Vec operator+(const Vec& o) const { return {c[0] + o.c[0], c[1] + o.c[1], c[2] + o.c[2]}; }
    Vec operator-(const Vec& o) const { return {c[0] - o.c[0], c[1] - o.c[1], c[2] - o.c[2]}; }
    Vec operator*(double a) const { return {c[0] * a, c[1] * a, c[2] * a}; }
};

inline Vec operator*(double a, const Vec& v) { return v * a; }

inline double dot(const Vec& a, const Vec& b) {
    return a.c[0] * b.c[0] + a.c[1] * b.c[1] + a.c[2] * b.c[2];
}
inline double norm2(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(norm2(a)); }

/// Deterministic pairwise summation; result is independent of any
/// parallel partitioning as long as block boundaries are fixed.
inline double pairwise_sum(const double* v, size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    size_t h = n / 2;
    return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

}  // namespace heatbc
