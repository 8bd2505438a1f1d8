#pragma once

#include <functional>
#include <vector>

#include "heatbc/detail/circle_engine.hpp"
#include "heatbc/geometry.hpp"
#include "heatbc/kernels.hpp"
#include "heatbc/series.hpp"

namespace heatbc {

enum class BoundaryCondition { Absorbing, Reflecting, Elastic };
enum class IntegralEquation { Prop1_FP, Prop1_LP, Prop2_FR, Prop2_LR };

namespace detail {

inline void require_interior(const PropagatorQuery& q, const Domain& dom) {
    if (dom.signed_distance(q.x, q.s) <= 0.0 || dom.signed_distance(q.y, q.t) <= 0.0)
        throw QueryOutsideDomain("query endpoints must be strictly interior");
}

/// Piecewise-linear value of a per-time-node field at an arbitrary time;
/// the field vanishes at both ends of the grid interval.
inline double interp_time(const TimeGrid& tg, const std::vector<double>& vals, double theta) {
    int n = tg.size();
    if (theta <= tg.nodes[0])
        return vals[0] * (theta - tg.s) / (tg.nodes[0] - tg.s);
    if (theta >= tg.nodes[static_cast<size_t>(n) - 1])
        return vals[static_cast<size_t>(n) - 1] * (tg.t - theta) /
               (tg.t - tg.nodes[static_cast<size_t>(n) - 1]);
    int lo = 0, hi = n - 1;
    while (hi - lo > 1) {
        int mid = (lo + hi) / 2;
        (tg.nodes[static_cast<size_t>(mid)] <= theta ? lo : hi) = mid;
    }
    double t0 = tg.nodes[static_cast<size_t>(lo)], t1 = tg.nodes[static_cast<size_t>(hi)];
    double lam = (theta - t0) / (t1 - t0);
    return vals[static_cast<size_t>(lo)] * (1.0 - lam) + vals[static_cast<size_t>(hi)] * lam;
}

/// Abel product integration of K(D) = phi(D)/sqrt(D) against a
/// per-node field, for the self-interaction kernels whose smooth factor
/// phi and exact mass are supplied by the caller.
struct AbelKernel {
    // integral of K over [d1,d2], 0 <= d1 < d2
    std::function<double(double, double)> mass;
};

inline AbelKernel elastic_self_kernel(double kappa, double sigma) {
    double c = -kappa * sigma * std::sqrt(2.0 / M_PI);
    return AbelKernel{[c](double d1, double d2) { return c * (std::sqrt(d2) - std::sqrt(d1)); }};
}

inline AbelKernel moving_self_kernel(double v, double sigma) {
    if (v == 0.0) return AbelKernel{[](double, double) { return 0.0; }};
    double a = v * v / (2.0 * sigma * sigma);
    double s = (v > 0.0) ? 1.0 : -1.0;
    return AbelKernel{[a, s](double d1, double d2) {
        return -s * (std::erf(std::sqrt(a * d2)) - std::erf(std::sqrt(a * d1)));
    }};
}

/// sum over segments of mass(seg) * field(centroid of the D^{-1/2} model),
/// for a target time and one boundary node's time-series. forward = source
/// times below the target.
inline double abel_apply(const TimeGrid& tg, const std::vector<double>& field, int target_j,
                         bool forward, const AbelKernel& k) {
    int n = tg.size();
    double target = tg.nodes[static_cast<size_t>(target_j)];
    double acc = 0.0;
    int nseg = forward ? target_j + 1 : n - target_j;
    for (int seg = 0; seg < nseg; ++seg) {
        double tlo, thi;
        if (forward) {
            tlo = (seg == 0) ? tg.s : tg.nodes[static_cast<size_t>(seg) - 1];
            thi = tg.nodes[static_cast<size_t>(seg)];
        } else {
            int kk = target_j + seg;
            tlo = tg.nodes[static_cast<size_t>(kk)];
            thi = (kk == n - 1) ? tg.t : tg.nodes[static_cast<size_t>(kk) + 1];
        }
        double d1 = forward ? target - thi : tlo - target;
        double d2 = forward ? target - tlo : thi - target;
        if (d1 < 0.0) d1 = 0.0;
        if (d2 <= d1) continue;
        double dbar = (d1 + d2 + std::sqrt(d1 * d2)) / 3.0;
        double theta_bar = forward ? target - dbar : target + dbar;
        acc += k.mass(d1, d2) * interp_time(tg, field, theta_bar);
    }
    return acc;
}

/**
 * Node-space layer engine: graded-trapezoid double sums with the
 * coincidence-zero kernel convention, plus Abel product integration for
 * singular self-interaction kernels (1D elastic). Used for 1D domains,
 * polygons and as a generic fallback.
 */
class PlainEngine {
public:
    PlainEngine(const Domain& dom, const QuadratureGrid& grid, const ModelParams& mp,
                BoundaryCondition bc)
        : dom_(dom), grid_(grid), mp_(mp), bc_(bc) {
        nodes_ = grid.static_nodes;
        m_ = static_cast<int>(nodes_.size());
        n_ = grid.time.size();
        if (bc_ == BoundaryCondition::Elastic && dom.dimension() == 1) {
            self_.reserve(static_cast<size_t>(m_));
            for (auto& nd : nodes_) self_.push_back(elastic_self_kernel(nd.kappa, mp.sigma));
        }
    }

    using Field = std::vector<double>;  // [j*m + a]

    Field first_layer(const PropagatorQuery& q, bool forward) const {
        Field F(static_cast<size_t>(n_) * m_);
        for (int j = 0; j < n_; ++j) {
            double th = grid_.time.nodes[static_cast<size_t>(j)];
            for (int a = 0; a < m_; ++a) {
                const BoundaryNode& nd = nodes_[static_cast<size_t>(a)];
                double v;
                if (forward) {
                    v = inward_normal_kernel(nd, th, q.x, q.s, mp_);
                    if (bc_ == BoundaryCondition::Elastic)
                        v -= nd.kappa * mp_.sigma * mp_.sigma *
                             free_propagator(mp_.dim, mp_.sigma, norm2(nd.position - q.x), th - q.s);
                } else {
                    double u = q.t - th;
                    Vec d = nd.position - q.y;
                    double B = free_propagator(mp_.dim, mp_.sigma, norm2(d), u);
                    v = dot(nd.outward_normal, d) / u * B;
                    if (bc_ == BoundaryCondition::Elastic) v -= nd.kappa * mp_.sigma * mp_.sigma * B;
                }
                F[static_cast<size_t>(j) * m_ + a] = v;
            }
        }
        return F;
    }

    Field apply(const Field& F, bool forward) const {
        Field out(static_cast<size_t>(n_) * m_, 0.0);
        double s2 = mp_.sigma * mp_.sigma;
        for (int j = 0; j < n_; ++j) {
            double th = grid_.time.nodes[static_cast<size_t>(j)];
            for (int a = 0; a < m_; ++a) {
                const BoundaryNode& na = nodes_[static_cast<size_t>(a)];
                double acc = 0.0;
                int j0 = forward ? 0 : j + 1, j1 = forward ? j : n_;
                for (int jp = j0; jp < j1; ++jp) {
                    double thp = grid_.time.nodes[static_cast<size_t>(jp)];
                    double delta = forward ? th - thp : thp - th;
                    double wt = grid_.time.weights[static_cast<size_t>(jp)];
                    double inner = 0.0;
                    for (int ap = 0; ap < m_; ++ap) {
                        const BoundaryNode& nb = nodes_[static_cast<size_t>(ap)];
                        Vec d = na.position - nb.position;
                        double r2 = norm2(d);
                        double ker = 0.0;
                        if (r2 > 0.0)
                            ker = dot(na.outward_normal, d) / delta *
                                  free_propagator(mp_.dim, mp_.sigma, r2, delta);
                        if (bc_ == BoundaryCondition::Elastic && (ap != a || dom_.dimension() > 1))
                            ker -= na.kappa * s2 * free_propagator(mp_.dim, mp_.sigma, r2, delta);
                        inner += nb.weight * ker * F[static_cast<size_t>(jp) * m_ + ap];
                    }
                    acc += wt * inner;
                }
                if (!self_.empty()) {
                    // singular same-node elastic kernel via product integration
                    std::vector<double> col(static_cast<size_t>(n_));
                    for (int jj = 0; jj < n_; ++jj) col[static_cast<size_t>(jj)] = F[static_cast<size_t>(jj) * m_ + a];
                    acc += nodes_[static_cast<size_t>(a)].weight *
                           abel_apply(grid_.time, col, j, forward, self_[static_cast<size_t>(a)]);
                }
                out[static_cast<size_t>(j) * m_ + a] = acc;
            }
        }
        return out;
    }

    double contract(const PropagatorQuery& q, const Field& F, bool forward) const {
        double acc = 0.0;
        for (int j = 0; j < n_; ++j) {
            double th = grid_.time.nodes[static_cast<size_t>(j)];
            double wt = grid_.time.weights[static_cast<size_t>(j)];
            double inner = 0.0;
            for (int a = 0; a < m_; ++a) {
                const BoundaryNode& nd = nodes_[static_cast<size_t>(a)];
                double B = forward
                               ? free_propagator(mp_.dim, mp_.sigma, norm2(q.y - nd.position), q.t - th)
                               : free_propagator(mp_.dim, mp_.sigma, norm2(nd.position - q.x), th - q.s);
                inner += nd.weight * B * F[static_cast<size_t>(j) * m_ + a];
            }
            acc += wt * inner;
        }
        return acc;
    }

private:
    const Domain& dom_;
    const QuadratureGrid& grid_;
    ModelParams mp_;
    BoundaryCondition bc_;
    std::vector<BoundaryNode> nodes_;
    std::vector<AbelKernel> self_;
    int m_ = 0, n_ = 0;
};

/// Circle-spectral driver shared by the absorbed/reflected/elastic series.
inline std::vector<double> circle_series_terms(const PropagatorQuery& q, const Domain& dom,
                                               const QuadratureGrid& grid, const SeriesOptions& opts,
                                               Direction dir, BoundaryCondition bc, double kappa) {
    CircleEngine eng(dom, grid.time, grid.n_boundary, q.params);
    bool forward = (dir == Direction::FP);
    int n = grid.time.size(), m = eng.n_modes();
    const auto& nodes = eng.nodes();
    double s2 = q.params.sigma * q.params.sigma;

    std::vector<double> f1(static_cast<size_t>(n) * m);
    for (int j = 0; j < n; ++j) {
        double th = grid.time.nodes[static_cast<size_t>(j)];
        for (int a = 0; a < m; ++a) {
            const BoundaryNode& nd = nodes[static_cast<size_t>(a)];
            double v;
            if (forward) {
                v = inward_normal_kernel(nd, th, q.x, q.s, q.params);
                if (bc == BoundaryCondition::Elastic)
                    v -= kappa * s2 * free_propagator(q.params.dim, q.params.sigma,
                                                      norm2(nd.position - q.x), th - q.s);
            } else {
                double u = q.t - th;
                Vec d = nd.position - q.y;
                double B = free_propagator(q.params.dim, q.params.sigma, norm2(d), u);
                v = dot(nd.outward_normal, d) / u * B;
                if (bc == BoundaryCondition::Elastic) v -= kappa * s2 * B;
            }
            f1[static_cast<size_t>(j) * m + a] = v;
        }
    }
    CircleEngine::Field F = eng.to_modes(f1);

    std::vector<double> bvals(static_cast<size_t>(n) * m);
    for (int j = 0; j < n; ++j) {
        double th = grid.time.nodes[static_cast<size_t>(j)];
        for (int a = 0; a < m; ++a) {
            const BoundaryNode& nd = nodes[static_cast<size_t>(a)];
            bvals[static_cast<size_t>(j) * m + a] =
                forward ? free_propagator(q.params.dim, q.params.sigma, norm2(q.y - nd.position), q.t - th)
                        : free_propagator(q.params.dim, q.params.sigma, norm2(nd.position - q.x), th - q.s);
        }
    }

    double kap = (bc == BoundaryCondition::Elastic) ? kappa : 0.0;
    std::vector<double> raw;  // unsigned contractions int oint B F_i
    std::vector<double> row(static_cast<size_t>(m));
    for (int i = 1; i <= opts.max_order; ++i) {
        if (i > 1) F = eng.apply(F, forward, kap);
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
            eng.to_nodes_row(&F[static_cast<size_t>(j) * m], row.data());
            double inner = 0.0;
            for (int a = 0; a < m; ++a)
                inner += nodes[static_cast<size_t>(a)].weight * bvals[static_cast<size_t>(j) * m + a] * row[static_cast<size_t>(a)];
            acc += grid.time.weights[static_cast<size_t>(j)] * inner;
        }
        raw.push_back(acc);
        double scale = std::fabs(raw[0]);
        if (std::fabs(acc) < opts.rel_tol * std::max(scale, 1e-300)) break;
    }
    return raw;
}

inline std::vector<double> plain_series_terms(const PropagatorQuery& q, const Domain& dom,
                                              const QuadratureGrid& grid, const SeriesOptions& opts,
                                              Direction dir, BoundaryCondition bc) {
    PlainEngine eng(dom, grid, q.params, bc);
    bool forward = (dir == Direction::FP);
    PlainEngine::Field F = eng.first_layer(q, forward);
    std::vector<double> raw;
    for (int i = 1; i <= opts.max_order; ++i) {
        if (i > 1) F = eng.apply(F, forward);
        double acc = eng.contract(q, F, forward);
        raw.push_back(acc);
        if (std::fabs(acc) < opts.rel_tol * std::max(std::fabs(raw[0]), 1e-300)) break;
    }
    return raw;
}

inline bool circle_domain(const Domain& d) {
    return d.kind() == DomainKind::Disk || d.kind() == DomainKind::ExteriorDisk;
}

inline SeriesResult assemble(const PropagatorQuery& q, const Domain& dom,
                             const QuadratureGrid& grid, const std::vector<double>& raw,
                             bool alternating_signs) {
    SeriesResult r;
    double b0 = free_propagator(q);
    r.terms.push_back(b0);
    r.partial_sums.push_back(b0);
    double sgn = 1.0;
    for (double v : raw) {
        sgn = alternating_signs ? -sgn : 1.0;
        double term = sgn * v;
        r.terms.push_back(term);
        r.partial_sums.push_back(r.partial_sums.back() + term);
    }
    r.quadrature_report = {grid.time.size(), grid.n_boundary, grid.time.grading};
    detail::finalize_series(r, std::fabs(b0), dom.convexity() == Convexity::Mixed);
    return r;
}

inline std::vector<double> series_terms(const PropagatorQuery& q, const Domain& dom,
                                        const QuadratureGrid& grid, const SeriesOptions& opts,
                                        Direction dir, BoundaryCondition bc, double kappa_const,
                                        bool kappa_uniform) {
    if (circle_domain(dom) && (bc != BoundaryCondition::Elastic || kappa_uniform))
        return circle_series_terms(q, dom, grid, opts, dir, bc, kappa_const);
    return plain_series_terms(q, dom, grid, opts, dir, bc);
}

inline void refine_guard(const PropagatorQuery& q, const Domain& dom, const QuadratureGrid& grid,
                         const SeriesOptions& opts, Direction dir, BoundaryCondition bc,
                         double kappa_const, bool kappa_uniform) {
    if (!opts.refine_check) return;
    SeriesOptions o1 = opts;
    o1.max_order = 1;
    o1.refine_check = false;
    QuadratureGrid coarse = make_grid(dom, grid.time.s, grid.time.t,
                                      std::max(4, grid.time.size() / 2),
                                      std::max(1, grid.n_boundary / 2), grid.time.grading);
    double t_fine = series_terms(q, dom, grid, o1, dir, bc, kappa_const, kappa_uniform)[0];
    double t_coarse = series_terms(q, dom, coarse, o1, dir, bc, kappa_const, kappa_uniform)[0];
    double scale = std::max({std::fabs(t_fine), std::fabs(free_propagator(q)), 1e-30});
    if (std::fabs(t_fine - t_coarse) > opts.refine_tol * scale)
        throw QuadratureUnderresolved("grid-halving disagreement above tolerance");
}

}  // namespace detail

/// Truncated first/last-passage series for the absorbed propagator (Prop. 3
/// structure: order-i term enters with sign (-1)^i).
inline SeriesResult absorbed_series(const PropagatorQuery& q, const Domain& dom,
                                    const QuadratureGrid& grid, const SeriesOptions& opts = {},
                                    Direction dir = Direction::FP) {
    detail::require_interior(q, dom);
    detail::refine_guard(q, dom, grid, opts, dir, BoundaryCondition::Absorbing, 0.0, true);
    auto raw = detail::series_terms(q, dom, grid, opts, dir, BoundaryCondition::Absorbing, 0.0, true);
    return detail::assemble(q, dom, grid, raw, /*alternating=*/true);
}

/// First/last-reflection series: all correction terms enter with + sign.
inline SeriesResult reflected_series(const PropagatorQuery& q, const Domain& dom,
                                     const QuadratureGrid& grid, const SeriesOptions& opts = {},
                                     Direction dir = Direction::FP) {
    detail::require_interior(q, dom);
    detail::refine_guard(q, dom, grid, opts, dir, BoundaryCondition::Reflecting, 0.0, true);
    auto raw = detail::series_terms(q, dom, grid, opts, dir, BoundaryCondition::Reflecting, 0.0, true);
    return detail::assemble(q, dom, grid, raw, /*alternating=*/false);
}

/// Elastic series: reflected kernels with each boundary derivative replaced
/// by (derivative - kappa sigma^2); kappa = 0 reproduces reflected_series
/// exactly (identical code path when kappa vanishes).
inline SeriesResult elastic_series(const PropagatorQuery& q, const Domain& dom,
                                   const QuadratureGrid& grid, const SeriesOptions& opts = {},
                                   Direction dir = Direction::FP) {
    detail::require_interior(q, dom);
    bool uniform = true;
    double k0 = dom.kappa_at(dom.boundary_quadrature(1)[0].position);
    for (const auto& nd : grid.static_nodes.empty() ? dom.boundary_quadrature(grid.n_boundary)
                                                    : grid.static_nodes)
        if (std::fabs(nd.kappa - k0) > 1e-14 * std::max(1.0, std::fabs(k0))) { uniform = false; break; }
    bool all_zero = uniform && k0 == 0.0;
    BoundaryCondition bc = all_zero ? BoundaryCondition::Reflecting : BoundaryCondition::Elastic;
    auto raw = detail::series_terms(q, dom, grid, opts, dir, bc, k0, uniform);
    SeriesResult r = detail::assemble(q, dom, grid, raw, /*alternating=*/false);
    detail::check_divergence(r.terms);
    return r;
}

/// Absorbed series over a linearly moving 1D boundary b(theta); the
/// boundary-boundary kernel becomes a weakly singular Abel kernel whose
/// segment masses are exact error functions.
inline SeriesResult moving_absorbed_series(const PropagatorQuery& q, const Domain& dom,
                                           const QuadratureGrid& grid, const SeriesOptions& opts = {},
                                           Direction dir = Direction::FP) {
    if (dom.kind() != DomainKind::MovingHalfLine)
        throw InvalidParameters("moving_absorbed_series: domain must be MovingHalfLine");
    detail::require_interior(q, dom);
    const TimeGrid& tg = grid.time;
    int n = tg.size();
    bool forward = (dir == Direction::FP);
    double sigma = q.params.sigma;
    double v = dom.moving_speed();

    auto bpos = [&](double th) { return dom.boundary_position(th); };
    // first layer on the moving node
    std::vector<double> F(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
        double th = tg.nodes[static_cast<size_t>(j)];
        double b = bpos(th);
        if (forward) {
            double u = th - q.s;
            F[static_cast<size_t>(j)] = (q.x[0] - b) / u * free_propagator(1, sigma, (b - q.x[0]) * (b - q.x[0]), u);
        } else {
            double u = q.t - th;
            F[static_cast<size_t>(j)] = (q.y[0] - b) / u * free_propagator(1, sigma, (b - q.y[0]) * (b - q.y[0]), u);
        }
    }
    // FP chain kernel -v B(...), LP chain kernel +v B(...); both have the
    // closed-form mass -+ sign(v) [erf(sqrt(a D2)) - erf(sqrt(a D1))]
    detail::AbelKernel ker = detail::moving_self_kernel(forward ? v : -v, sigma);

    std::vector<double> raw;
    std::vector<double> cur = F;
    for (int i = 1; i <= opts.max_order; ++i) {
        if (i > 1) {
            std::vector<double> nxt(static_cast<size_t>(n));
            for (int j = 0; j < n; ++j)
                nxt[static_cast<size_t>(j)] = detail::abel_apply(tg, cur, j, forward, ker);
            cur = nxt;
        }
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
            double th = tg.nodes[static_cast<size_t>(j)];
            double b = bpos(th);
            double B = forward
                           ? free_propagator(1, sigma, (q.y[0] - b) * (q.y[0] - b), q.t - th)
                           : free_propagator(1, sigma, (b - q.x[0]) * (b - q.x[0]), th - q.s);
            acc += tg.weights[static_cast<size_t>(j)] * B * cur[static_cast<size_t>(j)];
        }
        raw.push_back(acc);
        if (std::fabs(acc) < opts.rel_tol * std::max(std::fabs(raw[0]), 1e-300)) break;
    }
    return detail::assemble(q, dom, grid, raw, /*alternating=*/true);
}

/// Lemma-3 identity: int dtau oint dbeta B(y,t|beta,tau) {dleft - dright}
/// B(beta,tau|x,s), which vanishes for interior endpoints and picks up
/// +-B(y,t|x,s) when an endpoint sits on the boundary.
inline double lemma3_identity_check(const PropagatorQuery& q, const Domain& dom,
                                    const QuadratureGrid& grid) {
    const TimeGrid& tg = grid.time;
    double acc = 0.0;
    for (int j = 0; j < tg.size(); ++j) {
        double th = tg.nodes[static_cast<size_t>(j)];
        double inner = 0.0;
        for (const auto& nd : grid.nodes_at(th)) {
            double u_fwd = q.t - th, u_bwd = th - q.s;
            Vec dy = nd.position - q.y, dx = nd.position - q.x;
            double Bf = free_propagator(q.params.dim, q.params.sigma, norm2(dy), u_fwd);
            double Bb = free_propagator(q.params.dim, q.params.sigma, norm2(dx), u_bwd);
            double left = dot(nd.outward_normal, dy) / u_fwd * Bf * Bb;   // B dleft  B
            double right = Bf * dot(nd.outward_normal, dx) / u_bwd * Bb;  // B dright B
            inner += nd.weight * (left - right);
        }
        acc += tg.weights[static_cast<size_t>(j)] * inner;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// integral-equation residuals (the half-derivative forms of Props. 1-2)
// ---------------------------------------------------------------------------

inline double th_at(const QuadratureGrid& g, int j) { return g.time.nodes[static_cast<size_t>(j)]; }

/// Residual of Prop. 1/2 for a series candidate; layers are recomputed and
/// the candidate's boundary flux is the resummed layer sum
///   H_n = sum_{k<=n} (-1)^{k-1} F_k + (-1)^n (1/2) F_{n+1},
/// which is how the half-derivative acts on the order-n partial sum.
inline double residual_integral_equation(const PropagatorQuery& q, const Domain& dom,
                                         const QuadratureGrid& grid, const SeriesOptions& opts,
                                         IntegralEquation which) {
    detail::require_interior(q, dom);
    bool fp_side = (which == IntegralEquation::Prop1_FP || which == IntegralEquation::Prop2_FR);
    bool absorbed = (which == IntegralEquation::Prop1_FP || which == IntegralEquation::Prop1_LP);

    if (absorbed) {
        bool forward = (which == IntegralEquation::Prop1_FP);
        double Bfree = free_propagator(q);
        double integral_BH = 0.0;
        if (detail::circle_domain(dom)) {
            detail::CircleEngine eng(dom, grid.time, grid.n_boundary, q.params);
            int n = grid.time.size(), m = eng.n_modes();
            // assemble H in mode space while iterating layers
            std::vector<double> f1(static_cast<size_t>(n) * m);
            const auto& nodes = eng.nodes();
            for (int j = 0; j < n; ++j) {
                double th = grid.time.nodes[static_cast<size_t>(j)];
                for (int a = 0; a < m; ++a) {
                    const BoundaryNode& nd = nodes[static_cast<size_t>(a)];
                    f1[static_cast<size_t>(j) * m + a] =
                        forward ? inward_normal_kernel(nd, th, q.x, q.s, q.params)
                                : dot(nd.outward_normal, nd.position - q.y) / (q.t - th) *
                                      free_propagator(q.params.dim, q.params.sigma,
                                                      norm2(nd.position - q.y), q.t - th);
                }
            }
            auto F = eng.to_modes(f1);
            detail::CircleEngine::Field H(F.size(), {0.0, 0.0});
            double sgn = 1.0;
            std::vector<double> contributions;
            for (int k = 1; k <= opts.max_order + 1; ++k) {
                if (k > 1) F = eng.apply(F, forward, 0.0);
                double coef = (k <= opts.max_order) ? sgn : sgn * 0.5;
                for (size_t idx = 0; idx < H.size(); ++idx) H[idx] += coef * F[idx];
                // raw contraction for the partial sum
                if (k <= opts.max_order) {
                    std::vector<double> rowv(static_cast<size_t>(m));
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) {
                        eng.to_nodes_row(&F[static_cast<size_t>(j) * m], rowv.data());
                        double inner = 0.0;
                        for (int a = 0; a < m; ++a) {
                            const BoundaryNode& nd = nodes[static_cast<size_t>(a)];
                            double B = forward ? free_propagator(q.params.dim, q.params.sigma,
                                                                  norm2(q.y - nd.position), q.t - th_at(grid, j))
                                               : free_propagator(q.params.dim, q.params.sigma,
                                                                  norm2(nd.position - q.x), th_at(grid, j) - q.s);
                            inner += nd.weight * B * rowv[static_cast<size_t>(a)];
                        }
                        acc += grid.time.weights[static_cast<size_t>(j)] * inner;
                    }
                    contributions.push_back(acc);
                }
                sgn = -sgn;
            }
            double A_n = Bfree;
            double s1 = 1.0;
            for (double c : contributions) { s1 = -s1; A_n += s1 * c; }
            // integral of B * H
            std::vector<double> rowv(static_cast<size_t>(m));
            for (int j = 0; j < n; ++j) {
                eng.to_nodes_row(&H[static_cast<size_t>(j) * m], rowv.data());
                double inner = 0.0;
                for (int a = 0; a < m; ++a) {
                    const BoundaryNode& nd = nodes[static_cast<size_t>(a)];
                    double B = forward ? free_propagator(q.params.dim, q.params.sigma,
                                                          norm2(q.y - nd.position), q.t - th_at(grid, j))
                                       : free_propagator(q.params.dim, q.params.sigma,
                                                          norm2(nd.position - q.x), th_at(grid, j) - q.s);
                    inner += nd.weight * B * rowv[static_cast<size_t>(a)];
                }
                integral_BH += grid.time.weights[static_cast<size_t>(j)] * inner;
            }
            return std::fabs(A_n - Bfree + integral_BH);
        }
        // plain-engine version (1D and polygon domains)
        detail::PlainEngine eng(dom, grid, q.params, BoundaryCondition::Absorbing);
        auto F = eng.first_layer(q, forward);
        detail::PlainEngine::Field H(F.size(), 0.0);
        double sgn = 1.0;
        std::vector<double> contributions;
        for (int k = 1; k <= opts.max_order + 1; ++k) {
            if (k > 1) F = eng.apply(F, forward);
            double coef = (k <= opts.max_order) ? sgn : sgn * 0.5;
            for (size_t idx = 0; idx < H.size(); ++idx) H[idx] += coef * F[idx];
            if (k <= opts.max_order) contributions.push_back(eng.contract(q, F, forward));
            sgn = -sgn;
        }
        double A_n = Bfree;
        double s1 = 1.0;
        for (double c : contributions) { s1 = -s1; A_n += s1 * c; }
        integral_BH = eng.contract(q, H, forward);
        return std::fabs(A_n - Bfree + integral_BH);
    }

    // Prop. 2: reflected equations need the series value at boundary
    // queries; supported through the callable overload below.
    (void)fp_side;
    throw InvalidParameters("residual_integral_equation: use the candidate overload for Prop. 2");
}

/// Prop. 1 residual for an exact candidate: candidate_value = A(y,t|x,s),
/// flux(beta,tau) = {1/2 d} A at the boundary (toward the candidate).
inline double residual_prop1_exact(const PropagatorQuery& q, const Domain& dom,
                                   const QuadratureGrid& grid, IntegralEquation which,
                                   double candidate_value,
                                   const std::function<double(const Vec&, double)>& half_flux) {
    bool forward = (which == IntegralEquation::Prop1_FP);
    const TimeGrid& tg = grid.time;
    double acc = 0.0;
    for (int j = 0; j < tg.size(); ++j) {
        double th = tg.nodes[static_cast<size_t>(j)];
        double inner = 0.0;
        for (const auto& nd : grid.nodes_at(th)) {
            double B = forward ? free_propagator(q.params.dim, q.params.sigma, norm2(q.y - nd.position), q.t - th)
                               : free_propagator(q.params.dim, q.params.sigma, norm2(nd.position - q.x), th - q.s);
            inner += nd.weight * B * half_flux(nd.position, th);
        }
        acc += tg.weights[static_cast<size_t>(j)] * inner;
    }
    return std::fabs(candidate_value - free_propagator(q) + acc);
}

/// Prop. 2 residual for a candidate supplying boundary values:
/// FR needs R(y,t|beta,tau), LR needs R(beta,tau|x,s).
inline double residual_prop2_exact(const PropagatorQuery& q, const Domain& dom,
                                   const QuadratureGrid& grid, IntegralEquation which,
                                   double candidate_value,
                                   const std::function<double(const Vec&, double)>& boundary_value) {
    bool fr = (which == IntegralEquation::Prop2_FR);
    const TimeGrid& tg = grid.time;
    double acc = 0.0;
    for (int j = 0; j < tg.size(); ++j) {
        double th = tg.nodes[static_cast<size_t>(j)];
        double inner = 0.0;
        for (const auto& nd : grid.nodes_at(th)) {
            double half_d;
            if (fr) {
                double u = th - q.s;
                Vec d = nd.position - q.x;
                half_d = 0.5 * dot(nd.outward_normal, d) / u *
                         free_propagator(q.params.dim, q.params.sigma, norm2(d), u);
            } else {
                double u = q.t - th;
                Vec d = nd.position - q.y;
                half_d = 0.5 * dot(nd.outward_normal, d) / u *
                         free_propagator(q.params.dim, q.params.sigma, norm2(d), u);
            }
            inner += nd.weight * half_d * boundary_value(nd.position, th);
        }
        acc += tg.weights[static_cast<size_t>(j)] * inner;
    }
    (void)dom;
    return std::fabs(candidate_value - free_propagator(q) - acc);
}

/// Smeared-candidate interface for the moving-boundary FR residual: the
/// callable returns (value, stderr) of the test-function-smeared reflected
/// propagator started at (z, tau).
struct SmearedCandidate {
    std::function<std::pair<double, double>(double z, double tau)> eval;
};

struct MovingResidualReport {
    double residual = 0.0;
    double band = 0.0;  // propagated candidate stderr plus quadrature margin
};

/// FR equation of the moving reflected problem, smeared against the test
/// function g: value(x,s) = int g B + int dtau {v + (x-b)/2(tau-s)} B(b,tau|x,s) value(b,tau).
inline MovingResidualReport moving_reflected_residual(const PropagatorQuery& q, const Domain& dom,
                                                      const QuadratureGrid& grid,
                                                      const SmearedCandidate& candidate,
                                                      const std::function<double(double)>& g) {
    if (dom.kind() != DomainKind::MovingHalfLine)
        throw InvalidParameters("moving_reflected_residual: domain must be MovingHalfLine");
    const TimeGrid& tg = grid.time;
    double sigma = q.params.sigma;
    double v = dom.moving_speed();

    // free smeared term by Gauss-Hermite (the free density is Gaussian)
    const Rule1D& gh = gauss_hermite_prob(48);
    double su = sigma * std::sqrt(q.t - q.s);
    double free_term = 0.0;
    for (size_t i = 0; i < gh.x.size(); ++i) free_term += gh.w[i] * g(q.x[0] + su * gh.x[i]);

    double acc = 0.0, band = 0.0;
    for (int j = 0; j < tg.size(); ++j) {
        double tau = tg.nodes[static_cast<size_t>(j)];
        double b = dom.boundary_position(tau);
        double u = tau - q.s;
        double coef = (v + 0.5 * (q.x[0] - b) / u) *
                      free_propagator(1, sigma, (b - q.x[0]) * (b - q.x[0]), u);
        auto [val, se] = candidate.eval(b, tau);
        acc += tg.weights[static_cast<size_t>(j)] * coef * val;
        band += std::fabs(tg.weights[static_cast<size_t>(j)] * coef) * se;
    }
    auto [val_xs, se_xs] = candidate.eval(q.x[0], q.s);
    MovingResidualReport rep;
    rep.residual = std::fabs(val_xs - free_term - acc);
    rep.band = se_xs + band;
    return rep;
}

}  // namespace heatbc
