#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "ivimlab/error.hpp"

namespace ivimlab::stats {

enum class SdKind { Population, Sample };

inline double mean(std::span<const double> v) {
    if (v.empty()) throw ArgumentError("mean of an empty sample");
    // shifted by the first value so a constant sample is exact
    const double x0 = v.front();
    double acc = 0.0;
    for (double x : v) acc += x - x0;
    return x0 + acc / static_cast<double>(v.size());
}

inline double sd(std::span<const double> v, SdKind kind) {
    const std::size_t n = v.size();
    const std::size_t dof = kind == SdKind::Sample ? n - 1 : n;
    if (n == 0 || dof == 0) throw ArgumentError("standard deviation needs more values");
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(dof));
}

// ---------------------------------------------------------------------------
// Distribution functions

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ArgumentError("incomplete beta needs a, b > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Two-sided tail probability P(|T| >= |t|) for Student's t with dof degrees of freedom.
inline double student_t_two_sided(double t, double dof) {
    if (!(dof > 0.0)) throw ArgumentError("t distribution needs positive degrees of freedom");
    if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(t)) return 0.0;
    return incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
}

inline double student_t_cdf(double t, double dof) {
    const double tail = 0.5 * student_t_two_sided(t, dof);
    return t >= 0.0 ? 1.0 - tail : tail;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// ---------------------------------------------------------------------------
// Heterogeneity

/// Standard deviation over mean. Population sd for intra-mask maps, sample
/// sd for inter-subject comparisons.
inline double cv(std::span<const double> values, SdKind kind = SdKind::Population) {
    if (values.size() < 2) throw ArgumentError("coefficient of variation needs at least 2 values");
    const double m = mean(values);
    if (m == 0.0) throw UndefinedError("coefficient of variation undefined for zero mean");
    return sd(values, kind) / m;
}

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> probabilities;

    std::size_t bins() const noexcept { return probabilities.size(); }
    std::vector<double> edges() const {
        std::vector<double> e(bins() + 1);
        for (std::size_t i = 0; i <= bins(); ++i)
            e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins());
        return e;
    }
};

/// Equal-width bins over [min, max]; the maximum lands in the last bin and a
/// single-valued sample puts all mass in the first.
inline Histogram histogram(std::span<const double> values, std::size_t bins) {
    if (values.empty()) throw ArgumentError("histogram of an empty sample");
    if (bins == 0) throw ArgumentError("histogram needs at least one bin");
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    Histogram h{*mn, *mx, std::vector<double>(bins, 0.0)};
    const double width = h.hi - h.lo;
    std::vector<std::size_t> counts(bins, 0);
    for (double v : values) {
        std::size_t idx = 0;
        if (width > 0.0) {
            const double pos = (v - h.lo) / width * static_cast<double>(bins);
            idx = std::min(static_cast<std::size_t>(std::max(pos, 0.0)), bins - 1);
        }
        ++counts[idx];
    }
    const double n = static_cast<double>(values.size());
    for (std::size_t i = 0; i < bins; ++i) h.probabilities[i] = static_cast<double>(counts[i]) / n;
    return h;
}

inline double entropy_bits(std::span<const double> probabilities) {
    double h = 0.0;
    for (double p : probabilities)
        if (p > 0.0) h -= p * std::log2(p);
    return h;
}

inline double shannon_entropy(std::span<const double> values, std::size_t bins = 64) {
    return entropy_bits(histogram(values, bins).probabilities);
}

// ---------------------------------------------------------------------------
// Hypothesis tests

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    // Zero-variance input with a nonzero effect: p is reported as 0.
    bool degenerate = false;
};

/// Two-sided paired t-test on d = y - x.
inline TestResult paired_t_test(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ArgumentError("paired t-test needs equal-length samples");
    if (x.size() < 2) throw ArgumentError("paired t-test needs at least 2 pairs");
    const std::size_t n = x.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = y[i] - x[i];
    const double md = mean(d);
    const double sdd = sd(d, SdKind::Sample);

    TestResult out;
    out.n = out.n1 = out.n2 = n;
    if (sdd == 0.0) {
        if (md == 0.0) return out;  // identical samples: t = 0, p = 1
        out.statistic = md > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        out.p_value = 0.0;
        out.degenerate = true;
        return out;
    }
    out.statistic = md / (sdd / std::sqrt(static_cast<double>(n)));
    out.p_value = student_t_two_sided(out.statistic, static_cast<double>(n - 1));
    return out;
}

namespace detail {

// Mid-ranks (1-based) of the pooled sample.
inline std::vector<double> midranks(std::span<const double> pooled) {
    const std::size_t n = pooled.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

enum class UMethod { Auto, Exact, Asymptotic };

/// Mann-Whitney U. The statistic is U for x: the number of (x, y) pairs with
/// x > y, ties counting one half. The p-value is two-sided; exact by
/// enumeration of rank assignments when n1 + n2 <= 12 (Auto), otherwise from
/// the normal approximation with tie and continuity corrections.
inline TestResult mann_whitney_u(std::span<const double> x, std::span<const double> y,
                                 UMethod method = UMethod::Auto) {
    if (x.empty() || y.empty()) throw ArgumentError("Mann-Whitney U needs two non-empty samples");
    const std::size_t n1 = x.size();
    const std::size_t n2 = y.size();
    const std::size_t n = n1 + n2;
    std::vector<double> pooled(x.begin(), x.end());
    pooled.insert(pooled.end(), y.begin(), y.end());
    const auto ranks = detail::midranks(pooled);

    const double base = 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
    const double r1 = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(n1), 0.0);
    const double u = r1 - base;
    const double mu = 0.5 * static_cast<double>(n1) * static_cast<double>(n2);

    TestResult out;
    out.statistic = u;
    out.n = n;
    out.n1 = n1;
    out.n2 = n2;

    const bool exact = method == UMethod::Exact || (method == UMethod::Auto && n <= 12);
    if (exact) {
        if (n > 24) throw ArgumentError("exact Mann-Whitney enumeration limited to 24 observations");
        // Enumerate every choice of n1 positions out of n via a selection mask.
        const double observed = std::abs(u - mu) - 1e-9;
        std::vector<bool> pick(n, false);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n1), true);
        std::size_t total = 0;
        std::size_t extreme = 0;
        // prev_permutation walks all combinations when starting from the
        // lexicographically largest arrangement.
        do {
            double rs = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                if (pick[i]) rs += ranks[i];
            ++total;
            if (std::abs(rs - base - mu) >= observed) ++extreme;
        } while (std::prev_permutation(pick.begin(), pick.end()));
        out.p_value = static_cast<double>(extreme) / static_cast<double>(total);
        return out;
    }

    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && sorted[j] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    const double nn = static_cast<double>(n);
    const double var = static_cast<double>(n1) * static_cast<double>(n2) / 12.0 *
                       ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    if (!(var > 0.0)) return out;  // every observation tied
    const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(var);
    out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    return out;
}

struct Regression {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
};

/// Ordinary least squares y = slope x + intercept; p from the two-sided
/// t-test on the slope with n - 2 degrees of freedom.
inline Regression linear_regression(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ArgumentError("regression needs equal-length samples");
    if (x.size() < 3) throw ArgumentError("regression needs at least 3 points");
    const std::size_t n = x.size();
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) throw UndefinedError("regression undefined for a constant regressor");

    Regression out;
    out.n = n;
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    out.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 0.0;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = y[i] - (out.slope * x[i] + out.intercept);
        sse += e * e;
    }
    const double dof = static_cast<double>(n - 2);
    const double se = std::sqrt(sse / dof / sxx);
    if (se == 0.0) {
        out.p_value = out.slope == 0.0 ? 1.0 : 0.0;
    } else {
        out.p_value = student_t_two_sided(out.slope / se, dof);
    }
    return out;
}

/// Mean over i of |b_i - a_i| / |a_i|, in percent; a is the reference.
inline double mean_abs_pct_diff(std::span<const double> reference, std::span<const double> other) {
    if (reference.size() != other.size()) throw ArgumentError("percentage difference needs equal-length lists");
    if (reference.empty()) throw ArgumentError("percentage difference of empty lists");
    double acc = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (reference[i] == 0.0) throw UndefinedError("percentage difference undefined for a zero reference");
        acc += std::abs(other[i] - reference[i]) / std::abs(reference[i]) * 100.0;
    }
    return acc / static_cast<double>(reference.size());
}

}  // namespace ivimlab::stats
