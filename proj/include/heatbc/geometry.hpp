#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "heatbc/common.hpp"
#include "heatbc/quadrature.hpp"

namespace heatbc {

enum class DomainKind { HalfLine, Interval, Disk, Ball, Polygon, ExteriorDisk, MovingHalfLine };
enum class Convexity { Convex, Concave, Mixed };

/// One boundary quadrature node. The normal points out of the domain,
/// the weight is a surface-measure weight (counting measure in 1D).
struct BoundaryNode {
    Vec position;
    Vec outward_normal;
    double weight = 1.0;
    Vec velocity;        // nonzero only for moving domains
    double kappa = 0.0;  // local elasticity
};

/**
 * A static or moving domain with indicator, signed distance and boundary
 * quadrature. Signed distance is positive inside, negative outside.
 */
class Domain {
public:
    DomainKind kind() const { return kind_; }
    int dimension() const { return dim_; }
    Convexity convexity() const { return convexity_; }
    bool is_moving() const { return kind_ == DomainKind::MovingHalfLine; }

    // -- factories ---------------------------------------------------------

    /// Half line {e.(x - origin) > 0}; default is the positive axis.
    static Domain half_line(double origin = 0.0, double inward = +1.0) {
        if (inward == 0.0) throw InvalidParameters("half_line: zero direction");
        Domain d;
        d.kind_ = DomainKind::HalfLine;
        d.dim_ = 1;
        d.convexity_ = Convexity::Convex;
        d.a_ = origin;
        d.dir_ = inward > 0 ? 1.0 : -1.0;
        return d;
    }

    static Domain interval(double a, double b) {
        if (!(b > a)) throw InvalidParameters("interval: need a < b");
        Domain d;
        d.kind_ = DomainKind::Interval;
        d.dim_ = 1;
        d.convexity_ = Convexity::Convex;
        d.a_ = a; d.b_ = b;
        return d;
    }

    static Domain disk(Vec center, double radius) {
        if (!(radius > 0.0)) throw InvalidParameters("disk: radius must be positive");
        Domain d;
        d.kind_ = DomainKind::Disk;
        d.dim_ = 2;
        d.convexity_ = Convexity::Convex;
        d.center_ = center; d.radius_ = radius;
        return d;
    }

    static Domain ball(Vec center, double radius) {
        if (!(radius > 0.0)) throw InvalidParameters("ball: radius must be positive");
        Domain d;
        d.kind_ = DomainKind::Ball;
        d.dim_ = 3;
        d.convexity_ = Convexity::Convex;
        d.center_ = center; d.radius_ = radius;
        return d;
    }

    static Domain exterior_disk(Vec center, double radius) {
        if (!(radius > 0.0)) throw InvalidParameters("exterior_disk: radius must be positive");
        Domain d;
        d.kind_ = DomainKind::ExteriorDisk;
        d.dim_ = 2;
        d.convexity_ = Convexity::Concave;
        d.center_ = center; d.radius_ = radius;
        return d;
    }

    /// Simple closed polygon, vertices in order (either orientation).
    static Domain polygon(std::vector<Vec> vertices) {
        if (vertices.size() < 3) throw InvalidParameters("polygon: need at least 3 vertices");
        Domain d;
        d.kind_ = DomainKind::Polygon;
        d.dim_ = 2;
        d.verts_ = std::move(vertices);
        d.validate_simple_polygon();
        d.orient_ccw();
        d.convexity_ = d.classify_polygon();
        return d;
    }

    /// Boundary at b(tau) = a + v (tau - s0), domain {x > b(tau)}.
    static Domain moving_half_line(double a, double v, double s0 = 0.0) {
        if (!std::isfinite(v)) throw InvalidParameters("moving_half_line: speed must be finite");
        Domain d;
        d.kind_ = DomainKind::MovingHalfLine;
        d.dim_ = 1;
        d.convexity_ = Convexity::Convex;
        d.a_ = a; d.v_ = v; d.s0_ = s0;
        d.dir_ = 1.0;
        return d;
    }

    // -- elasticity --------------------------------------------------------

    Domain& set_kappa(double k) {
        if (k < 0.0) throw InvalidParameters("kappa must be nonnegative");
        kappa_const_ = k; kappa_fn_ = nullptr;
        return *this;
    }
    Domain& set_kappa(std::function<double(const Vec&)> fn) {
        kappa_fn_ = std::move(fn);
        return *this;
    }
    double kappa_at(const Vec& p) const { return kappa_fn_ ? kappa_fn_(p) : kappa_const_; }

    // -- geometry queries ----------------------------------------------------

    double boundary_position(double time) const {  // moving half line only
        return a_ + v_ * (time - s0_);
    }

    double signed_distance(const Vec& p, double time = 0.0) const {
        switch (kind_) {
            case DomainKind::HalfLine: return dir_ * (p[0] - a_);
            case DomainKind::Interval: return std::min(p[0] - a_, b_ - p[0]);
            case DomainKind::Disk:
            case DomainKind::Ball:     return radius_ - norm(p - center_);
            case DomainKind::ExteriorDisk: return norm(p - center_) - radius_;
            case DomainKind::MovingHalfLine: return p[0] - boundary_position(time);
            case DomainKind::Polygon:  return polygon_signed_distance(p);
        }
        throw Error("unreachable");
    }

    int indicator(const Vec& p, double time = 0.0) const {
        return signed_distance(p, time) > 0.0 ? 1 : 0;
    }

    /// Laplacian of the signed distance (mean-curvature term used by
    /// normal-coordinate bump potentials). Zero for flat boundaries.
    double signed_distance_laplacian(const Vec& p, double time = 0.0) const {
        (void)time;
        switch (kind_) {
            case DomainKind::Disk:
            case DomainKind::Ball: {
                double r = norm(p - center_);
                if (r <= 0.0) throw CoincidentPoints("distance Laplacian at center");
                return -(dim_ - 1) / r;
            }
            case DomainKind::ExteriorDisk: {
                double r = norm(p - center_);
                if (r <= 0.0) throw CoincidentPoints("distance Laplacian at center");
                return +(dim_ - 1) / r;
            }
            default: return 0.0;
        }
    }

    /// Outward normal extended off the boundary by nearest-point projection.
    Vec nearest_normal(const Vec& p, double time = 0.0) const {
        switch (kind_) {
            case DomainKind::HalfLine: return Vec(-dir_);
            case DomainKind::MovingHalfLine: (void)time; return Vec(-1.0);
            case DomainKind::Interval:
                return (p[0] - a_ <= b_ - p[0]) ? Vec(-1.0) : Vec(+1.0);
            case DomainKind::Disk:
            case DomainKind::Ball: {
                Vec r = p - center_;
                double n = norm(r);
                if (n == 0.0) throw CoincidentPoints("normal at center");
                return r * (1.0 / n);
            }
            case DomainKind::ExteriorDisk: {
                Vec r = p - center_;
                double n = norm(r);
                if (n == 0.0) throw CoincidentPoints("normal at center");
                return r * (-1.0 / n);
            }
            case DomainKind::Polygon: return polygon_nearest_normal(p);
        }
        throw Error("unreachable");
    }

    /// Signed curvature coefficient for the near-diagonal boundary kernel:
    /// n_beta.(beta-gamma) = q |beta-gamma|^2 + O(|beta-gamma|^3) with
    /// q = 1/(2R) on a circle/sphere, -1/(2R) on the exterior circle, 0 flat.
    double boundary_curvature_coeff() const {
        switch (kind_) {
            case DomainKind::Disk:
            case DomainKind::Ball: return +0.5 / radius_;
            case DomainKind::ExteriorDisk: return -0.5 / radius_;
            default: return 0.0;
        }
    }

    double radius() const { return radius_; }
    Vec center() const { return center_; }
    double interval_a() const { return a_; }
    double interval_b() const { return b_; }
    double moving_speed() const { return v_; }
    const std::vector<Vec>& vertices() const { return verts_; }

    // -- boundary quadrature -------------------------------------------------

    std::vector<BoundaryNode> boundary_quadrature(int n_nodes, double time = 0.0) const {
        if (n_nodes < 1) throw InvalidParameters("boundary_quadrature: n_nodes >= 1");
        std::vector<BoundaryNode> out;
        switch (kind_) {
            case DomainKind::HalfLine: {
                BoundaryNode b;
                b.position = Vec(a_);
                b.outward_normal = Vec(-dir_);
                b.weight = 1.0;  // counting measure in 1D
                b.kappa = kappa_at(b.position);
                out.push_back(b);
                break;
            }
            case DomainKind::MovingHalfLine: {
                BoundaryNode b;
                b.position = Vec(boundary_position(time));
                b.outward_normal = Vec(-1.0);
                b.weight = 1.0;
                b.velocity = Vec(v_);
                b.kappa = kappa_at(b.position);
                out.push_back(b);
                break;
            }
            case DomainKind::Interval: {
                BoundaryNode lo, hi;
                lo.position = Vec(a_); lo.outward_normal = Vec(-1.0); lo.weight = 1.0;
                hi.position = Vec(b_); hi.outward_normal = Vec(+1.0); hi.weight = 1.0;
                lo.kappa = kappa_at(lo.position); hi.kappa = kappa_at(hi.position);
                out.push_back(lo);
                out.push_back(hi);
                break;
            }
            case DomainKind::Disk:
            case DomainKind::ExteriorDisk: {
                double sign = (kind_ == DomainKind::Disk) ? +1.0 : -1.0;
                double w = 2.0 * M_PI * radius_ / n_nodes;
                out.reserve(static_cast<size_t>(n_nodes));
                for (int i = 0; i < n_nodes; ++i) {
                    double phi = 2.0 * M_PI * i / n_nodes;
                    BoundaryNode b;
                    Vec rad(std::cos(phi), std::sin(phi));
                    b.position = center_ + rad * radius_;
                    b.outward_normal = rad * sign;
                    b.weight = w;
                    b.kappa = kappa_at(b.position);
                    out.push_back(b);
                }
                break;
            }
            case DomainKind::Ball: {
                // product rule: Gauss-Legendre in cos(theta) x uniform in phi
                int npol = std::max(4, static_cast<int>(std::sqrt(n_nodes / 2.0)));
                int nphi = std::max(4, n_nodes / npol);
                const Rule1D& gl = gauss_legendre(npol);
                out.reserve(static_cast<size_t>(npol) * nphi);
                for (int i = 0; i < npol; ++i) {
                    double ct = gl.x[static_cast<size_t>(i)];
                    double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
                    double wring = gl.w[static_cast<size_t>(i)] * (2.0 * M_PI / nphi) * radius_ * radius_;
                    for (int j = 0; j < nphi; ++j) {
                        double phi = 2.0 * M_PI * (j + 0.5) / nphi;
                        BoundaryNode b;
                        Vec rad(st * std::cos(phi), st * std::sin(phi), ct);
                        b.position = center_ + rad * radius_;
                        b.outward_normal = rad;
                        b.weight = wring;
                        b.kappa = kappa_at(b.position);
                        out.push_back(b);
                    }
                }
                break;
            }
            case DomainKind::Polygon: {
                // corners excluded: per-edge uniform midpoints, open at both ends
                double perim = 0.0;
                size_t nv = verts_.size();
                for (size_t e = 0; e < nv; ++e) perim += norm(verts_[(e + 1) % nv] - verts_[e]);
                for (size_t e = 0; e < nv; ++e) {
                    Vec p0 = verts_[e], p1 = verts_[(e + 1) % nv];
                    Vec tangent = p1 - p0;
                    double len = norm(tangent);
                    int m = std::max(1, static_cast<int>(std::lround(n_nodes * len / perim)));
                    Vec that = tangent * (1.0 / len);
                    Vec nrm(that[1], -that[0]);  // outward for CCW orientation
                    for (int i = 0; i < m; ++i) {
                        BoundaryNode b;
                        b.position = p0 + tangent * ((i + 0.5) / m);
                        b.outward_normal = nrm;
                        b.weight = len / m;
                        b.kappa = kappa_at(b.position);
                        out.push_back(b);
                    }
                }
                break;
            }
        }
        return out;
    }

private:
    DomainKind kind_ = DomainKind::HalfLine;
    int dim_ = 1;
    Convexity convexity_ = Convexity::Convex;
    double a_ = 0.0, b_ = 1.0;       // half line origin / interval endpoints
    double dir_ = 1.0;               // half line inward direction
    double v_ = 0.0, s0_ = 0.0;      // moving boundary speed and epoch
    Vec center_;
    double radius_ = 1.0;
    std::vector<Vec> verts_;
    double kappa_const_ = 0.0;
    std::function<double(const Vec&)> kappa_fn_;

    void validate_simple_polygon() const {
        size_t n = verts_.size();
        auto seg_intersect = [](Vec a, Vec b, Vec c, Vec d) {
            auto cross = [](Vec u, Vec v) { return u[0] * v[1] - u[1] * v[0]; };
            double d1 = cross(d - c, a - c), d2 = cross(d - c, b - c);
            double d3 = cross(b - a, c - a), d4 = cross(b - a, d - a);
            return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
        };
        for (size_t i = 0; i < n; ++i) {
            Vec a = verts_[i], b = verts_[(i + 1) % n];
            if (norm(b - a) <= 0.0) throw InvalidParameters("polygon: repeated vertex");
            for (size_t j = i + 1; j < n; ++j) {
                if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
                if (seg_intersect(a, b, verts_[j], verts_[(j + 1) % n]))
                    throw InvalidParameters("polygon: self-intersecting");
            }
        }
    }

    void orient_ccw() {
        double area2 = 0.0;
        size_t n = verts_.size();
        for (size_t i = 0; i < n; ++i) {
            Vec a = verts_[i], b = verts_[(i + 1) % n];
            area2 += a[0] * b[1] - b[0] * a[1];
        }
        if (area2 < 0.0) std::reverse(verts_.begin(), verts_.end());
    }

    Convexity classify_polygon() const {
        size_t n = verts_.size();
        bool any_neg = false;
        for (size_t i = 0; i < n; ++i) {
            Vec a = verts_[i], b = verts_[(i + 1) % n], c = verts_[(i + 2) % n];
            double cr = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            if (cr < 0) any_neg = true;
        }
        return any_neg ? Convexity::Mixed : Convexity::Convex;
    }

    double polygon_signed_distance(const Vec& p) const {
        size_t n = verts_.size();
        double dmin = std::numeric_limits<double>::infinity();
        bool inside = false;
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
            Vec vi = verts_[i], vj = verts_[j];
            if ((vi[1] > p[1]) != (vj[1] > p[1])) {
                double xint = (vj[0] - vi[0]) * (p[1] - vi[1]) / (vj[1] - vi[1]) + vi[0];
                if (p[0] < xint) inside = !inside;
            }
            Vec e = vj - vi, d = p - vi;
            double tt = std::clamp(dot(d, e) / norm2(e), 0.0, 1.0);
            dmin = std::min(dmin, norm(d - e * tt));
        }
        return inside ? dmin : -dmin;
    }

    Vec polygon_nearest_normal(const Vec& p) const {
        size_t n = verts_.size();
        double dmin = std::numeric_limits<double>::infinity();
        Vec best(1.0, 0.0);
        for (size_t i = 0; i < n; ++i) {
            Vec vi = verts_[i], vj = verts_[(i + 1) % n];
            Vec e = vj - vi, d = p - vi;
            double tt = std::clamp(dot(d, e) / norm2(e), 0.0, 1.0);
            double dist = norm(d - e * tt);
            if (dist < dmin) {
                dmin = dist;
                Vec that = e * (1.0 / norm(e));
                best = Vec(that[1], -that[0]);
            }
        }
        return best;
    }
};

/// Shared space-time quadrature: graded time nodes plus boundary nodes
/// (time-dependent only for moving domains).
struct QuadratureGrid {
    TimeGrid time;
    int n_boundary = 1;
    const Domain* domain = nullptr;
    std::vector<BoundaryNode> static_nodes;  // cached for static domains

    std::vector<BoundaryNode> nodes_at(double theta) const {
        if (domain && domain->is_moving()) return domain->boundary_quadrature(n_boundary, theta);
        return static_nodes;
    }
};

inline QuadratureGrid make_grid(const Domain& dom, double s, double t, int n_time,
                                int n_boundary, double grading = 2.0) {
    QuadratureGrid g;
    g.time = make_time_grid(s, t, n_time, grading);
    g.n_boundary = n_boundary;
    g.domain = &dom;
    if (!dom.is_moving()) g.static_nodes = dom.boundary_quadrature(n_boundary);
    return g;
}

}  // namespace heatbc
