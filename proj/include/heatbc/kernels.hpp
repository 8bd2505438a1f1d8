#pragma once

#include <cmath>

#include "heatbc/common.hpp"
#include "heatbc/geometry.hpp"

namespace heatbc {

/// Diffusion scale and spatial dimension. The Gaussian is normalised so
/// that it integrates to one for every sigma.
struct ModelParams {
    double sigma = 1.0;
    int dim = 1;
};

/// One propagator evaluation request: backward (x,s) to forward (y,t).
struct PropagatorQuery {
    Vec x;
    double s = 0.0;
    Vec y;
    double t = 1.0;
    ModelParams params;

    double dt() const { return t - s; }
};

/// Free transition density with squared displacement r2 over elapsed u.
inline double free_propagator(int dim, double sigma, double r2, double u) {
    if (!(u > 0.0)) throw NonpositiveTimeInterval("free_propagator: need t > s");
    double var = sigma * sigma * u;
    double pref = std::pow(2.0 * M_PI * var, -0.5 * dim);
    return pref * std::exp(-r2 / (2.0 * var));
}

inline double free_propagator(const PropagatorQuery& q) {
    return free_propagator(q.params.dim, q.params.sigma, norm2(q.y - q.x), q.dt());
}

/**
 * Scaled inward-normal-derivative kernel at a boundary node:
 *   n_beta.(beta - x) / (theta - s) * B(beta,theta | x,s).
 * The sigma^2 of the scaling cancels against the Gaussian gradient, and
 * the minus sign of the inward convention against the outward normal.
 */
inline double inward_normal_kernel(const BoundaryNode& node, double theta,
                                   const Vec& x, double s, const ModelParams& p) {
    double u = theta - s;
    if (!(u > 0.0)) throw NonpositiveTimeInterval("inward_normal_kernel: need theta > s");
    Vec d = node.position - x;
    double r2 = norm2(d);
    if (r2 == 0.0 && u < 1e-14) throw CoincidentPoints("inward_normal_kernel");
    return dot(node.outward_normal, d) / u * free_propagator(p.dim, p.sigma, r2, u);
}

/// Boundary-to-boundary kernel of the layer recurrence. Exactly zero at
/// node coincidence; on smooth boundaries n.(beta_a-beta_b) vanishes
/// quadratically there so the convention is consistent.
inline double boundary_boundary_kernel(const BoundaryNode& a, double theta_a,
                                       const BoundaryNode& b, double theta_b,
                                       const ModelParams& p) {
    double u = theta_a - theta_b;
    if (!(u > 0.0)) throw NonpositiveTimeInterval("boundary_boundary_kernel: need theta_a > theta_b");
    Vec d = a.position - b.position;
    double r2 = norm2(d);
    if (r2 == 0.0) return 0.0;
    return dot(a.outward_normal, d) / u * free_propagator(p.dim, p.sigma, r2, u);
}

/// Time-integrated free Green function, finite for d >= 3:
///   (1/sigma^2) Gamma(d/2-1) / (2 pi^{d/2}) |y-x|^{2-d}.
inline double free_green(const Vec& y, const Vec& x, const ModelParams& p) {
    if (p.dim < 3) throw DimensionTooLow("free_green: finite only for d >= 3");
    double r = norm(y - x);
    if (r == 0.0) throw CoincidentPoints("free_green: y = x");
    double d = static_cast<double>(p.dim);
    double pref = std::tgamma(0.5 * d - 1.0) / (2.0 * std::pow(M_PI, 0.5 * d));
    return pref / (p.sigma * p.sigma) * std::pow(r, 2.0 - d);
}

/// Inward-normal derivative of the free Green function at a boundary node,
/// the time-integrated analogue of inward_normal_kernel. For d = 3 this is
/// n.(beta - x) / (2 pi |beta - x|^3), independent of sigma.
inline double green_normal_kernel(const BoundaryNode& node, const Vec& x, const ModelParams& p) {
    if (p.dim < 3) throw DimensionTooLow("green_normal_kernel: d >= 3");
    Vec d = node.position - x;
    double r = norm(d);
    if (r == 0.0) throw CoincidentPoints("green_normal_kernel");
    double dd = static_cast<double>(p.dim);
    double pref = (dd - 2.0) * std::tgamma(0.5 * dd - 1.0) / (2.0 * std::pow(M_PI, 0.5 * dd));
    return pref * dot(node.outward_normal, d) * std::pow(r, -dd);
}

}  // namespace heatbc
