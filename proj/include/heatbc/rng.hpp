#pragma once

#include <cstdint>
#include <cmath>
#include <limits>

#include "heatbc/common.hpp"

namespace heatbc {

/**
 * Philox4x32-10 counter-based generator.
 *
 * Each (key, counter) pair maps to four independent 32-bit words, so a
 * stream per Monte Carlo path is just key = (seed_lo, path_index) with a
 * per-path block counter. Streams never overlap and draws are
 * reproducible under any parallel schedule.
 */
class Philox {
public:
    Philox(uint64_t seed, uint64_t stream)
        : key0_(static_cast<uint32_t>(seed ^ (seed >> 32))),
          key1_(static_cast<uint32_t>(stream ^ (stream >> 32))),
          ctr0_(static_cast<uint32_t>(stream)),
          ctr1_(static_cast<uint32_t>(seed)) {}

    struct Block { uint32_t w[4]; };

    static Block block(uint32_t c0, uint32_t c1, uint32_t c2, uint32_t c3,
                       uint32_t k0, uint32_t k1) {
        uint32_t x0 = c0, x1 = c1, x2 = c2, x3 = c3;
        for (int r = 0; r < 10; ++r) {
            uint64_t p0 = kM0 * static_cast<uint64_t>(x0);
            uint64_t p1 = kM1 * static_cast<uint64_t>(x2);
            uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
            uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
            uint32_t y0 = hi1 ^ x1 ^ k0;
            uint32_t y1 = lo1;
            uint32_t y2 = hi0 ^ x3 ^ k1;
            uint32_t y3 = lo0;
            x0 = y0; x1 = y1; x2 = y2; x3 = y3;
            k0 += kW0; k1 += kW1;
        }
        return Block{{x0, x1, x2, x3}};
    }

    uint32_t next_u32() {
        if (have_ == 0) {
            blk_ = block(ctr0_, ctr1_, ctr2_, ctr3_, key0_, key1_);
            have_ = 4;
            if (++ctr2_ == 0) ++ctr3_;
        }
        return blk_.w[4 - have_--];
    }

    /// Uniform in (0,1), strictly excluding both endpoints.
    double next_uniform() {
        uint64_t hi = next_u32(), lo = next_u32();
        // 53-bit mantissa, offset by half an ulp so 0 and 1 are unreachable
        uint64_t m = ((hi & 0x1FFFFFull) << 32) | lo;
        return (static_cast<double>(m) + 0.5) * 0x1p-53;
    }

    /// Standard normal via inverse-CDF (Acklam's rational approximation,
    /// relative error < 1.2e-9). One uniform per normal keeps the stream
    /// layout simple and the hot loop branch-light.
    double next_normal() { return normal_icdf(next_uniform()); }

    static double normal_icdf(double p) {
        static const double a[6] = {-3.969683028665376e+01,  2.209460984245205e+02,
                                    -2.759285104469687e+02,  1.383577518672690e+02,
                                    -3.066479806614716e+01,  2.506628277459239e+00};
        static const double b[5] = {-5.447609879822406e+01,  1.615858368580409e+02,
                                    -1.556989798598866e+02,  6.680131188771972e+01,
                                    -1.328068155288572e+01};
        static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                    -2.400758277161838e+00, -2.549732539343734e+00,
                                     4.374664141464968e+00,  2.938163982698783e+00};
        static const double d[4] = { 7.784695709041462e-03,  3.224671290700398e-01,
                                     2.445134137142996e+00,  3.754408661907416e+00};
        const double plow = 0.02425;
        if (p < plow) {
            double q = std::sqrt(-2.0 * std::log(p));
            return (((((c[0]*q+c[1])*q+c[2])*q+c[3])*q+c[4])*q+c[5]) /
                   ((((d[0]*q+d[1])*q+d[2])*q+d[3])*q+1.0);
        }
        if (p > 1.0 - plow) {
            double q = std::sqrt(-2.0 * std::log(1.0 - p));
            return -(((((c[0]*q+c[1])*q+c[2])*q+c[3])*q+c[4])*q+c[5]) /
                    ((((d[0]*q+d[1])*q+d[2])*q+d[3])*q+1.0);
        }
        double q = p - 0.5, r = q * q;
        return (((((a[0]*r+a[1])*r+a[2])*r+a[3])*r+a[4])*r+a[5])*q /
               (((((b[0]*r+b[1])*r+b[2])*r+b[3])*r+b[4])*r+1.0);
    }

private:
    static constexpr uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    static constexpr uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;

    uint32_t key0_, key1_;
    uint32_t ctr0_ = 0, ctr1_ = 0, ctr2_ = 0, ctr3_ = 0;
    Block blk_{};
    int have_ = 0;
};

}  // namespace heatbc
