#pragma once

#include <cmath>
#include <vector>

#include "heatbc/common.hpp"

namespace heatbc::detail {

/**
 * Exponentially scaled modified Bessel functions ie_l(z) = e^{-z} I_l(z)
 * for l = 0..lmax. Miller's downward recurrence with the normalisation
 * e^{-z}(I_0 + 2 sum I_l) = 1; switches to the large-z asymptotic series
 * when z dominates lmax^2.
 */
inline void bessel_ie_array(double z, int lmax, double* out) {
    if (z < 0.0) throw Error("bessel_ie_array: z must be nonnegative");
    if (z == 0.0) {
        out[0] = 1.0;
        for (int l = 1; l <= lmax; ++l) out[l] = 0.0;
        return;
    }
    double zl = static_cast<double>(lmax);
    if (z > 40.0 * zl * zl + 400.0) {
        // uniform large-z expansion, mu = 4 l^2
        double pref = 1.0 / std::sqrt(2.0 * M_PI * z);
        for (int l = 0; l <= lmax; ++l) {
            double mu = 4.0 * static_cast<double>(l) * l;
            double term = 1.0, sum = 1.0;
            for (int k = 1; k <= 8; ++k) {
                double f = mu - (2.0 * k - 1.0) * (2.0 * k - 1.0);
                term *= -f / (8.0 * z * k);
                sum += term;
                if (std::fabs(term) < 1e-17) break;
            }
            out[l] = pref * sum;
        }
        return;
    }
    // Miller: start high enough that I_L / I_0 is negligible
    int L = lmax + 40 + static_cast<int>(std::ceil(std::sqrt(80.0 * z)));
    std::vector<double> f(static_cast<size_t>(L) + 2, 0.0);
    f[static_cast<size_t>(L) + 1] = 0.0;
    f[static_cast<size_t>(L)] = 1e-280;
    double norm = 0.0;
    for (int l = L; l >= 1; --l) {
        f[static_cast<size_t>(l) - 1] = f[static_cast<size_t>(l) + 1] + (2.0 * l / z) * f[static_cast<size_t>(l)];
        if (f[static_cast<size_t>(l) - 1] > 1e280) {  // renormalise to avoid overflow
            double s = 1e-280;
            for (int k = l - 1; k <= L + 1; ++k) f[static_cast<size_t>(k)] *= s;
        }
    }
    norm = f[0];
    for (int l = 1; l <= L; ++l) norm += 2.0 * f[static_cast<size_t>(l)];
    for (int l = 0; l <= lmax; ++l) out[l] = f[static_cast<size_t>(l)] / norm;
}

/// ie'_l support: e^{-z}(I_l(z) - I'_l(z)) with I'_l = (I_{l-1}+I_{l+1})/2.
/// Caller supplies the ie array up to lmax+1.
inline double bessel_w_from_ie(const double* ie, int l) {
    double im1 = (l == 0) ? ie[1] : ie[l - 1];
    return ie[l] - 0.5 * (im1 + ie[l + 1]);
}

}  // namespace heatbc::detail
