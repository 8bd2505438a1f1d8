#pragma once

#include <complex>
#include <vector>

#include "heatbc/detail/bessel.hpp"
#include "heatbc/geometry.hpp"
#include "heatbc/kernels.hpp"
#include "heatbc/quadrature.hpp"

namespace heatbc::detail {

/**
 * Layer recurrence on a circle boundary, diagonal in angular Fourier modes.
 *
 * The boundary-boundary kernel on a circle of radius R depends only on the
 * angle difference, and its mode coefficients have an exact antiderivative
 * in the elapsed time:
 *
 *   Khat_l(D) = s (R^2/(s2 D^2)) e^{-z}(I_l(z) - I_l'(z)),  z = R^2/(s2 D),
 *   int Khat_l dD = s d/dD[ e^{-z} I_l(z) ] antiderivative = s e^{-z} I_l(z),
 *
 * with s = +1 for the disk, -1 for the exterior domain, s2 = sigma^2.
 * Segment masses are therefore exact; the weak D^{-1/2} singularity at the
 * time diagonal costs nothing. The piecewise interpolation of the layer in
 * time is the only discretisation of the inner integral.
 */
class CircleEngine {
public:
    CircleEngine(const Domain& dom, const TimeGrid& tg, int n_boundary, const ModelParams& mp)
        : tg_(tg), m_(n_boundary), mp_(mp) {
        R_ = dom.radius();
        sign_ = (dom.kind() == DomainKind::Disk) ? +1.0 : -1.0;
        lmax_ = m_ / 2 + 1;
        nodes_ = dom.boundary_quadrature(m_);
        n_ = tg_.size();
        build_mass_tables();
    }

    int n_time() const { return n_; }
    int n_modes() const { return m_; }
    const std::vector<BoundaryNode>& nodes() const { return nodes_; }

    using Field = std::vector<std::complex<double>>;  // [j*m + mode]

    /// Forward DFT of node values (per time row).
    Field to_modes(const std::vector<double>& node_vals) const {
        Field out(static_cast<size_t>(n_) * m_);
        for (int j = 0; j < n_; ++j) to_modes_row(&node_vals[static_cast<size_t>(j) * m_], &out[static_cast<size_t>(j) * m_]);
        return out;
    }

    void to_modes_row(const double* vals, std::complex<double>* out) const {
        for (int l = 0; l < m_; ++l) {
            std::complex<double> acc(0.0, 0.0);
            for (int a = 0; a < m_; ++a) {
                double ang = -2.0 * M_PI * l * a / m_;
                acc += vals[a] * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            out[l] = acc / static_cast<double>(m_);
        }
    }

    void to_nodes_row(const std::complex<double>* modes, double* vals) const {
        for (int a = 0; a < m_; ++a) {
            std::complex<double> acc(0.0, 0.0);
            for (int l = 0; l < m_; ++l) {
                double ang = 2.0 * M_PI * l * a / m_;
                acc += modes[l] * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            vals[a] = acc.real();
        }
    }

    /**
     * One layer step F_k = int dtheta' oint dgamma K F_{k-1}.
     * forward: source times below the target (FP); otherwise above (LP).
     * kappa >= 0 adds the elastic -kappa sigma^2 B convolution kernel.
     */
    Field apply(const Field& F, bool forward, double kappa) const {
        Field out(static_cast<size_t>(n_) * m_, {0.0, 0.0});
        // segment endpoints in source time for target j:
        //   forward: s = e[0], theta_0, ..., theta_j  (source below target)
        //   backward: theta_j, ..., theta_{n-1}, t
        for (int j = 0; j < n_; ++j) {
            std::complex<double>* dst = &out[static_cast<size_t>(j) * m_];
            int nseg = forward ? j + 1 : n_ - j;
            for (int seg = 0; seg < nseg; ++seg) {
                // source segment [tlo, thi] with layer values Flo, Fhi
                double tlo, thi;
                const std::complex<double>*Flo, *Fhi;
                if (forward) {
                    if (seg == 0) {
                        tlo = tg_.s;
                        thi = tg_.nodes[0];
                        Flo = nullptr;  // layer vanishes at s
                        Fhi = &F[0];
                        if (j == 0) { thi = tg_.nodes[0]; }
                    } else {
                        tlo = tg_.nodes[static_cast<size_t>(seg) - 1];
                        thi = tg_.nodes[static_cast<size_t>(seg)];
                        Flo = &F[(static_cast<size_t>(seg) - 1) * m_];
                        Fhi = &F[static_cast<size_t>(seg) * m_];
                    }
                    if (seg == j) thi = tg_.nodes[static_cast<size_t>(j)];  // last segment ends at target
                } else {
                    int k = j + seg;
                    if (k == n_ - 1) {
                        tlo = tg_.nodes[static_cast<size_t>(n_) - 1];
                        thi = tg_.t;
                        Flo = &F[(static_cast<size_t>(n_) - 1) * m_];
                        Fhi = nullptr;  // layer vanishes at t
                    } else {
                        tlo = tg_.nodes[static_cast<size_t>(k)];
                        thi = tg_.nodes[static_cast<size_t>(k) + 1];
                        Flo = &F[static_cast<size_t>(k) * m_];
                        Fhi = &F[(static_cast<size_t>(k) + 1) * m_];
                    }
                }
                double target = tg_.nodes[static_cast<size_t>(j)];
                double d_near, d_far;  // gaps |target - source| at segment ends
                if (forward) { d_near = target - thi; d_far = target - tlo; }
                else         { d_near = tlo - target; d_far = thi - target; }
                if (d_far <= 0.0) continue;
                if (d_near < 0.0) d_near = 0.0;

                // interpolation weight of the far end at the kernel centroid:
                // the |D|^{-1/2} model gives Dbar = (D1 + D2 + sqrt(D1 D2))/3
                double dbar = (d_near + d_far + std::sqrt(d_near * d_far)) / 3.0;
                double lam = (d_far > d_near) ? (dbar - d_near) / (d_far - d_near) : 0.5;

                const double* mass = mass_row(j, forward, seg);
                for (int l = 0; l < m_; ++l) {
                    int lf = (l <= m_ / 2) ? l : m_ - l;
                    std::complex<double> fnear = Fhi_or_zero(forward ? Fhi : Flo, l);
                    std::complex<double> ffar = Fhi_or_zero(forward ? Flo : Fhi, l);
                    std::complex<double> fc = fnear * (1.0 - lam) + ffar * lam;
                    double m0 = mass[lf];
                    if (kappa != 0.0) m0 += kappa_mass_row(j, forward, seg)[lf] * kappa;
                    dst[l] += m0 * fc;
                }
            }
        }
        return out;
    }

private:
    static std::complex<double> Fhi_or_zero(const std::complex<double>* p, int l) {
        return p ? p[l] : std::complex<double>(0.0, 0.0);
    }

    double z_of(double delta) const {
        return R_ * R_ / (mp_.sigma * mp_.sigma * delta);
    }

    void build_mass_tables() {
        // For every (target j, segment) pair store per-|l| masses
        //   int_seg Khat_l(D) dD = sign * (ie_l(z(D_far)) .. ie_l(z(D_near)))
        // By time symmetry the forward table for target j, segment seg equals
        // the backward table for target n-1-j (the grid is symmetric), but we
        // build both explicitly for clarity.
        masses_fwd_.resize(static_cast<size_t>(n_));
        masses_bwd_.resize(static_cast<size_t>(n_));
        kmasses_fwd_.resize(static_cast<size_t>(n_));
        kmasses_bwd_.resize(static_cast<size_t>(n_));
        std::vector<double> ie_lo(static_cast<size_t>(lmax_) + 2), ie_hi(static_cast<size_t>(lmax_) + 2);
        for (int j = 0; j < n_; ++j) {
            double target = tg_.nodes[static_cast<size_t>(j)];
            masses_fwd_[static_cast<size_t>(j)].assign(static_cast<size_t>(j + 1) * (lmax_ + 1), 0.0);
            kmasses_fwd_[static_cast<size_t>(j)].assign(static_cast<size_t>(j + 1) * (lmax_ + 1), 0.0);
            for (int seg = 0; seg <= j; ++seg) {
                double tlo = (seg == 0) ? tg_.s : tg_.nodes[static_cast<size_t>(seg) - 1];
                double thi = tg_.nodes[static_cast<size_t>(seg)];
                fill_masses(target - thi, target - tlo,
                            &masses_fwd_[static_cast<size_t>(j)][static_cast<size_t>(seg) * (lmax_ + 1)],
                            &kmasses_fwd_[static_cast<size_t>(j)][static_cast<size_t>(seg) * (lmax_ + 1)],
                            ie_lo, ie_hi);
            }
            int nseg_b = n_ - j;
            masses_bwd_[static_cast<size_t>(j)].assign(static_cast<size_t>(nseg_b) * (lmax_ + 1), 0.0);
            kmasses_bwd_[static_cast<size_t>(j)].assign(static_cast<size_t>(nseg_b) * (lmax_ + 1), 0.0);
            for (int seg = 0; seg < nseg_b; ++seg) {
                int k = j + seg;
                double tlo = tg_.nodes[static_cast<size_t>(k)];
                double thi = (k == n_ - 1) ? tg_.t : tg_.nodes[static_cast<size_t>(k) + 1];
                fill_masses(tlo - target, thi - target,
                            &masses_bwd_[static_cast<size_t>(j)][static_cast<size_t>(seg) * (lmax_ + 1)],
                            &kmasses_bwd_[static_cast<size_t>(j)][static_cast<size_t>(seg) * (lmax_ + 1)],
                            ie_lo, ie_hi);
            }
        }
    }

    void fill_masses(double d_near, double d_far, double* mass, double* kmass,
                     std::vector<double>& ie_lo, std::vector<double>& ie_hi) {
        if (d_near < 0.0) d_near = 0.0;
        if (d_far <= d_near) return;
        if (d_near == 0.0) {
            for (int l = 0; l <= lmax_ + 1; ++l) ie_lo[static_cast<size_t>(l)] = 0.0;
        } else {
            bessel_ie_array(z_of(d_near), lmax_ + 1, ie_lo.data());
        }
        bessel_ie_array(z_of(d_far), lmax_ + 1, ie_hi.data());
        for (int l = 0; l <= lmax_; ++l)
            mass[l] = sign_ * (ie_hi[static_cast<size_t>(l)] - ie_lo[static_cast<size_t>(l)]);
        // elastic convolution kernel  -sigma^2 Bhat_l(D) = -(R/D) ie_l(z);
        // no closed antiderivative, integrate in xi = sqrt(D) with GL3
        const Rule1D& gl = gauss_legendre(3);
        double xlo = std::sqrt(d_near), xhi = std::sqrt(d_far);
        std::vector<double> ie(static_cast<size_t>(lmax_) + 2);
        for (int l = 0; l <= lmax_; ++l) kmass[l] = 0.0;
        for (size_t g = 0; g < gl.x.size(); ++g) {
            double xi = 0.5 * (xlo + xhi) + 0.5 * (xhi - xlo) * gl.x[g];
            double wgt = 0.5 * (xhi - xlo) * gl.w[g] * 2.0 * xi;  // dD = 2 xi dxi
            double delta = xi * xi;
            bessel_ie_array(z_of(delta), lmax_ + 1, ie.data());
            double pref = -(R_ / delta);  // -sigma^2 * (R/(sigma^2 D)) ie_l
            for (int l = 0; l <= lmax_; ++l) kmass[l] += wgt * pref * ie[static_cast<size_t>(l)];
        }
    }

    const double* mass_row(int j, bool forward, int seg) const {
        const auto& tab = forward ? masses_fwd_[static_cast<size_t>(j)] : masses_bwd_[static_cast<size_t>(j)];
        return &tab[static_cast<size_t>(seg) * (lmax_ + 1)];
    }
    const double* kappa_mass_row(int j, bool forward, int seg) const {
        const auto& tab = forward ? kmasses_fwd_[static_cast<size_t>(j)] : kmasses_bwd_[static_cast<size_t>(j)];
        return &tab[static_cast<size_t>(seg) * (lmax_ + 1)];
    }

    TimeGrid tg_;
    int m_, n_ = 0, lmax_ = 0;
    ModelParams mp_;
    double R_ = 1.0, sign_ = 1.0;
    std::vector<BoundaryNode> nodes_;
    std::vector<std::vector<double>> masses_fwd_, masses_bwd_;
    std::vector<std::vector<double>> kmasses_fwd_, kmasses_bwd_;
};

}  // namespace heatbc::detail
