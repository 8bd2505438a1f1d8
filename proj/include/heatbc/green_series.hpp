#pragma once

#include <vector>

#include "heatbc/geometry.hpp"
#include "heatbc/kernels.hpp"
#include "heatbc/series.hpp"

namespace heatbc {

enum class LayerKind { SBL, DBL };

namespace detail {

/// Real spherical harmonics up to degree L at a unit direction, fully
/// normalised; index layout lm_index(l,m) with m in [-l, l].
inline int lm_index(int l, int m) { return l * l + l + m; }

inline void real_sph_harmonics(int L, const Vec& dir, std::vector<double>& out) {
    double x = dir[2];  // cos(theta)
    double sxy = std::sqrt(std::max(0.0, dir[0] * dir[0] + dir[1] * dir[1]));
    double cphi = (sxy > 0) ? dir[0] / sxy : 1.0, sphi = (sxy > 0) ? dir[1] / sxy : 0.0;
    out.assign(static_cast<size_t>((L + 1) * (L + 1)), 0.0);

    // fully normalised associated Legendre values, stable m-first recurrence
    std::vector<double> P(static_cast<size_t>((L + 1) * (L + 2) / 2), 0.0);
    auto pidx = [L](int l, int m) { return l * (l + 1) / 2 + m; };
    double st = std::sqrt(std::max(0.0, 1.0 - x * x));
    P[static_cast<size_t>(pidx(0, 0))] = std::sqrt(1.0 / (4.0 * M_PI));
    for (int m = 1; m <= L; ++m)
        P[static_cast<size_t>(pidx(m, m))] =
            -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * st * P[static_cast<size_t>(pidx(m - 1, m - 1))];
    for (int m = 0; m < L; ++m)
        P[static_cast<size_t>(pidx(m + 1, m))] =
            x * std::sqrt(2.0 * m + 3.0) * P[static_cast<size_t>(pidx(m, m))];
    for (int m = 0; m <= L; ++m)
        for (int l = m + 2; l <= L; ++l) {
            double a = std::sqrt((4.0 * l * l - 1.0) / (static_cast<double>(l) * l - m * m));
            double b = std::sqrt(((l - 1.0) * (l - 1.0) - m * m) / (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
            P[static_cast<size_t>(pidx(l, m))] =
                a * (x * P[static_cast<size_t>(pidx(l - 1, m))] - b * P[static_cast<size_t>(pidx(l - 2, m))]);
        }

    // cos(m phi), sin(m phi) by recurrence
    std::vector<double> cm(static_cast<size_t>(L) + 1), sm(static_cast<size_t>(L) + 1);
    cm[0] = 1.0; sm[0] = 0.0;
    for (int m = 1; m <= L; ++m) {
        cm[static_cast<size_t>(m)] = cm[static_cast<size_t>(m) - 1] * cphi - sm[static_cast<size_t>(m) - 1] * sphi;
        sm[static_cast<size_t>(m)] = sm[static_cast<size_t>(m) - 1] * cphi + cm[static_cast<size_t>(m) - 1] * sphi;
    }
    const double sq2 = std::sqrt(2.0);
    for (int l = 0; l <= L; ++l) {
        out[static_cast<size_t>(lm_index(l, 0))] = P[static_cast<size_t>(pidx(l, 0))];
        for (int m = 1; m <= l; ++m) {
            double p = P[static_cast<size_t>(pidx(l, m))];
            out[static_cast<size_t>(lm_index(l, m))] = sq2 * p * cm[static_cast<size_t>(m)];
            out[static_cast<size_t>(lm_index(l, -m))] = sq2 * p * sm[static_cast<size_t>(m)];
        }
    }
}

}  // namespace detail

/**
 * Time-integrated absorbed Green function on a ball, as a single (SBL) or
 * double (DBL) boundary layer series. The boundary-boundary kernel of the
 * iteration is 1/(4 pi R |beta-gamma|), whose spherical-harmonic
 * multipliers are exactly 1/(2l+1); the quadrature nodes fix the maximum
 * resolvable degree.
 */
inline SeriesResult green_absorbed_series(const Vec& y, const Vec& x, const Domain& dom,
                                          int n_boundary, const SeriesOptions& opts = {},
                                          LayerKind layer = LayerKind::DBL,
                                          const ModelParams& mp_in = ModelParams{1.0, 3}) {
    if (dom.kind() != DomainKind::Ball) throw InvalidParameters("green_absorbed_series: Ball domain required");
    ModelParams mp = mp_in;
    mp.dim = 3;
    if (norm(y - x) == 0.0) throw CoincidentPoints("green_absorbed_series: y = x");
    if (dom.signed_distance(x) <= 0.0 || dom.signed_distance(y) <= 0.0)
        throw QueryOutsideDomain("green_absorbed_series: interior points required");

    auto nodes = dom.boundary_quadrature(n_boundary);
    double R = dom.radius();
    // resolvable degree: polar rings give 2*npol-1, azimuth nphi/2 - 1
    int npol = std::max(4, static_cast<int>(std::sqrt(n_boundary / 2.0)));
    int nphi = std::max(4, n_boundary / npol);
    int L = std::min({npol - 1, (nphi - 1) / 2, 24});

    size_t nlm = static_cast<size_t>((L + 1) * (L + 1));
    std::vector<double> gy(nlm, 0.0), hx(nlm, 0.0), gx(nlm, 0.0), hy(nlm, 0.0);
    std::vector<double> Ybuf;
    for (const auto& nd : nodes) {
        Vec dir = (nd.position - dom.center()) * (1.0 / R);
        detail::real_sph_harmonics(L, dir, Ybuf);
        double w = nd.weight / (R * R);
        double Gy = free_green(y, nd.position, mp);
        double Gx = free_green(nd.position, x, mp);
        double Hx = green_normal_kernel(nd, x, mp);
        double Hy = green_normal_kernel(nd, y, mp);
        for (size_t k = 0; k < nlm; ++k) {
            gy[k] += w * Gy * Ybuf[k];
            gx[k] += w * Gx * Ybuf[k];
            hx[k] += w * Hx * Ybuf[k];
            hy[k] += w * Hy * Ybuf[k];
        }
    }

    SeriesResult r;
    double g0 = free_green(y, x, mp);
    r.terms.push_back(g0);
    r.partial_sums.push_back(g0);
    // modewise iteration: each boundary layer application divides by (2l+1)
    std::vector<double> lam(nlm);
    for (int l = 0; l <= L; ++l)
        for (int m = -l; m <= l; ++m)
            lam[static_cast<size_t>(detail::lm_index(l, m))] = 1.0 / (2.0 * l + 1.0);

    std::vector<double> carrier = (layer == LayerKind::DBL) ? hx : gx;
    const std::vector<double>& closer = (layer == LayerKind::DBL) ? gy : hy;
    double sgn = 1.0;
    for (int i = 1; i <= opts.max_order; ++i) {
        sgn = -sgn;
        double raw = 0.0;
        for (size_t k = 0; k < nlm; ++k) raw += closer[k] * carrier[k];
        raw *= R * R;
        double term = sgn * raw;
        r.terms.push_back(term);
        r.partial_sums.push_back(r.partial_sums.back() + term);
        // The boundary kernel has unit total mass, so the lowest mode of the
        // alternating tail does not decay; the midpoint of two consecutive
        // partial sums removes it and decays geometrically instead.
        if (i >= 2) {
            double pair_mean = 0.5 * std::fabs(term + r.terms[static_cast<size_t>(i) - 1]);
            if (pair_mean < opts.rel_tol * std::max(std::fabs(g0), 1e-300)) break;
        }
        for (size_t k = 0; k < nlm; ++k) carrier[k] *= lam[k];
    }
    size_t np = r.partial_sums.size();
    r.tail_averaged = true;
    r.tail_averaged_value = (np >= 2) ? 0.5 * (r.partial_sums[np - 1] + r.partial_sums[np - 2])
                                      : r.partial_sums.back();
    r.quadrature_report = {0, n_boundary, 0.0};
    detail::finalize_series(r, std::fabs(g0), false);
    return r;
}

}  // namespace heatbc
