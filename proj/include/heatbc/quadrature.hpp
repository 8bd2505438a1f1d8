#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <vector>

#include "heatbc/common.hpp"

namespace heatbc {

/// Nodes/weights of a one-dimensional rule on its natural interval.
struct Rule1D {
    std::vector<double> x, w;
};

namespace detail {

/// Eigenvalues + first eigenvector row of a symmetric tridiagonal matrix
/// (QL with implicit shifts). Used for Golub-Welsch quadrature rules.
inline void tridiag_eigen(std::vector<double>& diag, std::vector<double>& off,
                          std::vector<double>& first_row) {
    const int n = static_cast<int>(diag.size());
    first_row.assign(static_cast<size_t>(n), 0.0);
    std::vector<double> z(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) z[static_cast<size_t>(i) * n + i] = 1.0;
    off.push_back(0.0);

    for (int l = 0; l < n; ++l) {
        int iter = 0;
        int m;
        do {
            for (m = l; m < n - 1; ++m) {
                double dd = std::fabs(diag[m]) + std::fabs(diag[m + 1]);
                if (std::fabs(off[m]) <= 1e-300 + 2.3e-16 * dd) break;
            }
            if (m != l) {
                if (iter++ == 50) throw Error("tridiag_eigen: no convergence");
                double g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
                double r = std::hypot(g, 1.0);
                g = diag[m] - diag[l] + off[l] / (g + (g >= 0 ? std::fabs(r) : -std::fabs(r)));
                double s = 1.0, c = 1.0, p = 0.0;
                for (int i = m - 1; i >= l; --i) {
                    double f = s * off[i], b = c * off[i];
                    r = std::hypot(f, g);
                    off[i + 1] = r;
                    if (r == 0.0) { diag[i + 1] -= p; off[m] = 0.0; break; }
                    s = f / r; c = g / r;
                    g = diag[i + 1] - p;
                    r = (diag[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    diag[i + 1] = g + p;
                    g = c * r - b;
                    for (int k = 0; k < n; ++k) {
                        double zk1 = z[static_cast<size_t>(k) * n + i + 1];
                        double zk0 = z[static_cast<size_t>(k) * n + i];
                        z[static_cast<size_t>(k) * n + i + 1] = s * zk0 + c * zk1;
                        z[static_cast<size_t>(k) * n + i] = c * zk0 - s * zk1;
                    }
                }
                if (r == 0.0 && m - 1 >= l) continue;
                diag[l] -= p; off[l] = g; off[m] = 0.0;
            }
        } while (m != l);
    }
    // sort ascending, carry first eigenvector component
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (diag[static_cast<size_t>(idx[static_cast<size_t>(j)])] <
                diag[static_cast<size_t>(idx[static_cast<size_t>(i)])])
                std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    std::vector<double> d2(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        d2[static_cast<size_t>(i)] = diag[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        first_row[static_cast<size_t>(i)] = z[static_cast<size_t>(0) * n + idx[static_cast<size_t>(i)]];
    }
    diag = d2;
}

}  // namespace detail

/// Gauss-Legendre rule on [-1, 1].
inline const Rule1D& gauss_legendre(int n) {
    static std::map<int, Rule1D> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    std::vector<double> diag(static_cast<size_t>(n), 0.0), off;
    for (int k = 1; k < n; ++k) {
        double kk = static_cast<double>(k);
        off.push_back(kk / std::sqrt(4.0 * kk * kk - 1.0));
    }
    std::vector<double> q0;
    detail::tridiag_eigen(diag, off, q0);
    Rule1D r;
    r.x = diag;
    r.w.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) r.w[static_cast<size_t>(i)] = 2.0 * q0[static_cast<size_t>(i)] * q0[static_cast<size_t>(i)];
    return cache.emplace(n, std::move(r)).first->second;
}

/// Gauss-Hermite rule for the probabilists' weight: sum w_i f(x_i)
/// approximates E[f(Z)] with Z standard normal.
inline const Rule1D& gauss_hermite_prob(int n) {
    static std::map<int, Rule1D> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    std::vector<double> diag(static_cast<size_t>(n), 0.0), off;
    for (int k = 1; k < n; ++k) off.push_back(std::sqrt(static_cast<double>(k)));
    std::vector<double> q0;
    detail::tridiag_eigen(diag, off, q0);
    Rule1D r;
    r.x = diag;
    r.w.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) r.w[static_cast<size_t>(i)] = q0[static_cast<size_t>(i)] * q0[static_cast<size_t>(i)];
    return cache.emplace(n, std::move(r)).first->second;
}

/**
 * Time grid on (s, t), graded toward both endpoints.
 *
 * Nodes are midpoints of the cells of the graded map
 *   gamma(u) = u^p / (u^p + (1-u)^p),
 * weights are the cell widths. All nodes are strictly inside (s, t);
 * integrable endpoint behaviour is handled by the grading.
 */
struct TimeGrid {
    double s = 0.0, t = 1.0;
    double grading = 2.0;
    std::vector<double> nodes;   // ascending, strictly inside (s,t)
    std::vector<double> weights; // cell widths
    std::vector<double> edges;   // n+1 cell edges, edges[0]=s, edges[n]=t

    int size() const { return static_cast<int>(nodes.size()); }
};

inline TimeGrid make_time_grid(double s, double t, int n, double grading = 2.0) {
    if (!(t > s)) throw NonpositiveTimeInterval("make_time_grid: t must exceed s");
    if (n < 1 || grading <= 0.0) throw InvalidParameters("make_time_grid: bad n or grading");
    auto gamma = [grading](double u) {
        double a = std::pow(u, grading), b = std::pow(1.0 - u, grading);
        return a / (a + b);
    };
    TimeGrid g;
    g.s = s; g.t = t; g.grading = grading;
    g.edges.resize(static_cast<size_t>(n) + 1);
    g.nodes.resize(static_cast<size_t>(n));
    g.weights.resize(static_cast<size_t>(n));
    for (int j = 0; j <= n; ++j)
        g.edges[static_cast<size_t>(j)] = s + (t - s) * gamma(static_cast<double>(j) / n);
    g.edges[0] = s;
    g.edges[static_cast<size_t>(n)] = t;
    for (int j = 0; j < n; ++j) {
        double mid = s + (t - s) * gamma((j + 0.5) / n);
        g.nodes[static_cast<size_t>(j)] = mid;
        g.weights[static_cast<size_t>(j)] = g.edges[static_cast<size_t>(j) + 1] - g.edges[static_cast<size_t>(j)];
    }
    return g;
}

}  // namespace heatbc
