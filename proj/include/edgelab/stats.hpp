#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "edgelab/errors.hpp"
#include "edgelab/summation.hpp"

namespace edgelab::stats {

inline double mean(std::span<const double> x) {
    if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
    CompensatedSum s;
    for (double v : x) s += v;
    return s.value() / static_cast<double>(x.size());
}

// Unbiased sample variance.
inline double variance(std::span<const double> x) {
    if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double m = mean(x);
    CompensatedSum s;
    for (double v : x) s += (v - m) * (v - m);
    return s.value() / static_cast<double>(x.size() - 1);
}

inline double standard_error(std::span<const double> x) {
    return std::sqrt(variance(x) / static_cast<double>(x.size()));
}

// Linear interpolation between order statistics (R type 7).
inline double quantile(std::span<const double> x, double p) {
    if (x.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> v(x.begin(), x.end());
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::span<const double> x) { return quantile(x, 0.5); }

// Median absolute deviation from the median (unscaled).
inline double mad(std::span<const double> x) {
    const double med = median(x);
    std::vector<double> dev(x.size());
    std::transform(x.begin(), x.end(), dev.begin(), [med](double v) { return std::fabs(v - med); });
    return median(dev);
}

inline double correlation(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("correlation: size mismatch");
    const double mx = mean(x);
    const double my = mean(y);
    CompensatedSum sxy, sxx, syy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy.value() / std::sqrt(sxx.value() * syy.value());
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("fit_line: need >= 2 points");
    const double mx = mean(x);
    const double my = mean(y);
    CompensatedSum sxy, sxx;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    LineFit f;
    f.slope = sxy.value() / sxx.value();
    f.intercept = my - f.slope * mx;
    return f;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov distance between the sample and N(mu, sigma^2).
inline double ks_distance_normal(std::span<const double> x, double mu, double sigma) {
    std::vector<double> v(x.begin(), x.end());
    std::sort(v.begin(), v.end());
    const double n = static_cast<double>(v.size());
    double d = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double f = normal_cdf((v[i] - mu) / sigma);
        d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
    }
    return d;
}

/// KS distance to the Gaussian with matched sample mean and standard
/// deviation, with a parametric-bootstrap p-value and 95% critical value.
struct NormalityTest {
    double distance = 0.0;
    double critical_95 = 0.0;
    double p_value = 1.0;
};

inline NormalityTest ks_normality(std::span<const double> x, int resamples, std::uint64_t seed) {
    if (x.size() < 3) throw InsufficientSamples("ks_normality needs at least 3 values");
    NormalityTest out;
    out.distance = ks_distance_normal(x, mean(x), std::sqrt(variance(x)));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    std::vector<double> sim(x.size());
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(resamples));
    int exceed = 0;
    for (int r = 0; r < resamples; ++r) {
        for (double& v : sim) v = gauss(rng);
        const double d = ks_distance_normal(sim, mean(sim), std::sqrt(variance(sim)));
        if (d >= out.distance) ++exceed;
        dists.push_back(d);
    }
    out.critical_95 = quantile(dists, 0.95);
    out.p_value = (1.0 + exceed) / (1.0 + resamples);
    return out;
}

// Asymptotic Kolmogorov survival function Q_KS(lambda).
inline double kolmogorov_survival(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    for (int j = 1; j <= 200; ++j) {
        const double term = 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
        sum += term;
        if (std::fabs(term) < 1e-16) break;
    }
    return std::clamp(sum, 0.0, 1.0);
}

struct TwoSampleKS {
    double distance = 0.0;
    double p_value = 1.0;
};

inline TwoSampleKS ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw InsufficientSamples("ks_two_sample needs non-empty samples");
    std::vector<double> x(a.begin(), a.end());
    std::vector<double> y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double nx = static_cast<double>(x.size());
    const double ny = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double t = std::min(x[i], y[j]);
        while (i < x.size() && x[i] <= t) ++i;
        while (j < y.size() && y[j] <= t) ++j;
        d = std::max(d, std::fabs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
    }
    TwoSampleKS out;
    out.distance = d;
    const double ne = nx * ny / (nx + ny);
    const double sq = std::sqrt(ne);
    out.p_value = kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d);
    return out;
}

}  // namespace edgelab::stats
