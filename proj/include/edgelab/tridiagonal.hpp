#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "edgelab/errors.hpp"
#include "edgelab/matrix.hpp"

// Dense symmetric eigensolver without external dependencies: Householder
// reduction to tridiagonal form followed by implicit-shift QL, in the
// EISPACK tred2/tql2 arrangement. Also Sturm-sequence counting on the
// tridiagonal form.

namespace edgelab {

struct Tridiagonal {
    std::vector<double> d;  // diagonal
    std::vector<double> e;  // e[i] couples i and i+1, size n-1
};

namespace detail {

// On entry v holds the symmetric matrix. On exit d/e hold the tridiagonal
// form with e[0] = 0 and e[i] coupling i-1 and i; if `accumulate`, v holds
// the orthogonal transformation.
inline void tred2(DenseMatrix& v, std::vector<double>& d, std::vector<double>& e, bool accumulate) {
    const std::size_t n = v.size();
    d.assign(n, 0.0);
    e.assign(n, 0.0);
    if (n == 0) return;
    for (std::size_t j = 0; j < n; ++j) d[j] = v(n - 1, j);

    for (std::size_t i = n - 1; i > 0; --i) {
        double scale = 0.0;
        double h = 0.0;
        for (std::size_t k = 0; k < i; ++k) scale += std::fabs(d[k]);
        if (scale == 0.0) {
            e[i] = d[i - 1];
            for (std::size_t j = 0; j < i; ++j) {
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
                v(j, i) = 0.0;
            }
        } else {
            for (std::size_t k = 0; k < i; ++k) {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            double f = d[i - 1];
            double g = std::sqrt(h);
            if (f > 0) g = -g;
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;

            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                v(j, i) = f;
                g = e[j] + v(j, j) * f;
                for (std::size_t k = j + 1; k + 1 <= i; ++k) {
                    g += v(k, j) * d[k];
                    e[k] += v(k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for (std::size_t j = 0; j < i; ++j) {
                e[j] /= h;
                f += e[j] * d[j];
            }
            const double hh = f / (h + h);
            for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                g = e[j];
                for (std::size_t k = j; k + 1 <= i; ++k) v(k, j) -= (f * e[k] + g * d[k]);
                d[j] = v(i - 1, j);
                v(i, j) = 0.0;
            }
        }
        d[i] = h;
    }

    if (!accumulate) {
        for (std::size_t j = 0; j < n; ++j) d[j] = v(j, j);
        e[0] = 0.0;
        return;
    }

    for (std::size_t i = 0; i + 1 < n; ++i) {
        v(n - 1, i) = v(i, i);
        v(i, i) = 1.0;
        const double h = d[i + 1];
        if (h != 0.0) {
            for (std::size_t k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
            for (std::size_t j = 0; j <= i; ++j) {
                double g = 0.0;
                for (std::size_t k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
                for (std::size_t k = 0; k <= i; ++k) v(k, j) -= g * d[k];
            }
        }
        for (std::size_t k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
    }
    for (std::size_t j = 0; j < n; ++j) {
        d[j] = v(n - 1, j);
        v(n - 1, j) = 0.0;
    }
    v(n - 1, n - 1) = 1.0;
    e[0] = 0.0;
}

inline constexpr int kQlSweepBudget = 60;

// Implicit QL on (d, e) as left by tred2. Eigenvalues land in d (unsorted);
// if v is non-null its columns are rotated along.
inline void tql2(std::vector<double>& d, std::vector<double>& e, DenseMatrix* v) {
    const std::size_t n = d.size();
    if (n == 0) return;
    for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;

    double f = 0.0;
    double tst1 = 0.0;
    const double eps = std::numeric_limits<double>::epsilon();
    for (std::size_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::fabs(d[l]) + std::fabs(e[l]));
        std::size_t m = l;
        while (m < n) {
            if (std::fabs(e[m]) <= eps * tst1) break;
            ++m;
        }
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > kQlSweepBudget) throw NumericError("implicit QL did not converge");
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
                f += h;

                p = d[m];
                double c = 1.0, c2 = c, c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (std::size_t ii = m; ii-- > l;) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[ii];
                    h = c * p;
                    r = std::hypot(p, e[ii]);
                    e[ii + 1] = s * r;
                    s = e[ii] / r;
                    c = p / r;
                    p = c * d[ii] - s * g;
                    d[ii + 1] = h + s * (c * g + s * d[ii]);
                    if (v) {
                        for (std::size_t k = 0; k < n; ++k) {
                            h = (*v)(k, ii + 1);
                            (*v)(k, ii + 1) = s * (*v)(k, ii) + c * h;
                            (*v)(k, ii) = c * (*v)(k, ii) - s * h;
                        }
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::fabs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

}  // namespace detail

inline Tridiagonal tridiagonalize(const DenseMatrix& a) {
    DenseMatrix v = a;
    std::vector<double> d, e;
    detail::tred2(v, d, e, false);
    Tridiagonal t;
    t.d = d;
    t.e.assign(e.begin() + (e.empty() ? 0 : 1), e.end());
    return t;
}

/// Number of eigenvalues of the tridiagonal matrix strictly below x.
inline std::size_t sturm_count(const Tridiagonal& t, double x) {
    const std::size_t n = t.d.size();
    std::size_t count = 0;
    double q = 1.0;
    const double tiny = std::numeric_limits<double>::min() / std::numeric_limits<double>::epsilon();
    for (std::size_t i = 0; i < n; ++i) {
        const double off = i == 0 ? 0.0 : t.e[i - 1] * t.e[i - 1];
        q = t.d[i] - x - (i == 0 ? 0.0 : off / q);
        if (q == 0.0) q = -tiny;
        if (q < 0.0) ++count;
    }
    return count;
}

/// The k largest eigenvalues (descending) by bisection on Sturm counts.
inline std::vector<double> top_eigenvalues(const Tridiagonal& t, std::size_t k) {
    const std::size_t n = t.d.size();
    k = std::min(k, n);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = (i > 0 ? std::fabs(t.e[i - 1]) : 0.0) + (i + 1 < n ? std::fabs(t.e[i]) : 0.0);
        lo = std::min(lo, t.d[i] - r);
        hi = std::max(hi, t.d[i] + r);
    }
    std::vector<double> out;
    for (std::size_t j = 0; j < k; ++j) {
        // lambda with exactly n - j - 1 eigenvalues below it.
        const std::size_t target = n - j - 1;
        double a = lo, b = hi;
        for (int it = 0; it < 200 && b - a > 4 * std::numeric_limits<double>::epsilon() * std::max(std::fabs(a), std::fabs(b)); ++it) {
            const double mid = 0.5 * (a + b);
            if (sturm_count(t, mid) > target) {
                b = mid;
            } else {
                a = mid;
            }
        }
        out.push_back(0.5 * (a + b));
    }
    return out;
}

}  // namespace edgelab
