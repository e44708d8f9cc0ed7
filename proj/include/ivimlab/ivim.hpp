#pragma once

// Two-step voxel-wise IVIM fit.
//
//   1. ADC: mono-exponential S(b) = S0 exp(-b ADC) over b > b_threshold.
//   2. IVIM: S(b) = S0 [f exp(-D* b) + (1 - f) exp(-D b)] over every b with
//      D fixed to the step-1 ADC, solving for S0, f and D* >= D.
//
// Both steps refine a closed-form start with the bounded LM solver.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "ivimlab/error.hpp"
#include "ivimlab/grid.hpp"
#include "ivimlab/lm.hpp"
#include "ivimlab/stats.hpp"

namespace ivimlab {

struct IvimFitConfig {
    double b_threshold = 100.0;  // ADC uses b strictly above this
    double adc_lo = 1e-5;        // mm²/s
    double adc_hi = 1e-1;
    // D* ceiling; infinity leaves D* bounded below only. Without one, voxels
    // whose perfusion term is lost in noise drift to D* -> inf.
    double d_star_hi = 0.5;
    lm::Options solver{};

    void validate() const {
        if (!(b_threshold >= 0.0)) throw ArgumentError("b_threshold must be non-negative");
        if (!(adc_lo > 0.0) || !(adc_hi > adc_lo)) throw ArgumentError("adc range must satisfy 0 < lo < hi");
        if (!(d_star_hi > adc_hi)) throw ArgumentError("d_star_hi must exceed adc_hi");
    }
};

struct VoxelSignal {
    std::span<const double> bvalues;
    std::span<const double> intensities;
};

struct AdcFit {
    double s0_high = 0.0;  // intercept of the high-b mono-exponential
    double adc = 0.0;
    bool at_bound = false;
};

struct IvimFit {
    double s0 = 0.0;
    double f = 0.0;
    double d_star = 0.0;
    double residual = 0.0;  // RMSE over all b divided by S0
    bool at_bound = false;  // D* ended next to d_star_hi
};

inline double ivim_signal(double b, double s0, double f, double d_star, double d) {
    return s0 * (f * std::exp(-d_star * b) + (1.0 - f) * std::exp(-d * b));
}

namespace detail {

inline std::size_t count_distinct(std::vector<double> b) {
    std::sort(b.begin(), b.end());
    std::size_t n = 0;
    for (std::size_t i = 0; i < b.size(); ++i)
        if (i == 0 || b[i] - b[i - 1] >= kBValueTolerance) ++n;
    return n;
}

struct Line {
    double slope = 0.0;
    double intercept = 0.0;
};

// Least-squares line through at least two points with distinct x.
inline Line fit_line(std::span<const double> x, std::span<const double> y) {
    const double mx = stats::mean(x);
    const double my = stats::mean(y);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    const double slope = sxy / sxx;
    return {slope, my - slope * mx};
}

// Fraction of the way into [lo, hi] below which an ADC counts as a bound hit.
inline constexpr double kBoundFraction = 1e-4;

}  // namespace detail

/// Mono-exponential ADC from b > cfg.b_threshold. Returns nullopt when fewer
/// than two distinct b-values with positive intensity remain, or the solver
/// diverges.
inline std::optional<AdcFit> fit_adc(const VoxelSignal& sig, const IvimFitConfig& cfg = {}) {
    if (sig.bvalues.size() != sig.intensities.size()) {
        throw DimensionError("voxel signal has mismatched b-value and intensity counts");
    }
    std::vector<double> b, s;
    for (std::size_t i = 0; i < sig.bvalues.size(); ++i) {
        if (sig.bvalues[i] > cfg.b_threshold && sig.intensities[i] > 0.0 && std::isfinite(sig.intensities[i])) {
            b.push_back(sig.bvalues[i]);
            s.push_back(sig.intensities[i]);
        }
    }
    if (detail::count_distinct(b) < 2) return std::nullopt;

    const double scale = *std::max_element(s.begin(), s.end());
    std::vector<double> y(s.size()), logy(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        y[i] = s[i] / scale;
        logy[i] = std::log(y[i]);
    }

    // Log-linear start: ln S = ln S0 - b ADC.
    const auto reg = detail::fit_line(b, logy);
    const double width = cfg.adc_hi - cfg.adc_lo;
    const double adc0 = std::clamp(-reg.slope, cfg.adc_lo + 1e-6 * width, cfg.adc_hi - 1e-6 * width);
    const double s00 = std::exp(reg.intercept);

    lm::FitProblem problem;
    problem.residual_count = b.size();
    problem.initial = {s00, adc0};
    problem.transforms = {lm::Transform::positive(), lm::Transform::logistic(cfg.adc_lo, cfg.adc_hi)};
    problem.residual = [&](std::span<const double> p, std::span<double> r) {
        for (std::size_t i = 0; i < b.size(); ++i) r[i] = p[0] * std::exp(-b[i] * p[1]) - y[i];
    };
    const auto res = lm::fit(problem, cfg.solver);
    if (res.reason == lm::Termination::Diverged) return std::nullopt;

    AdcFit out;
    out.s0_high = res.params[0] * scale;
    out.adc = res.params[1];
    const double frac = (out.adc - cfg.adc_lo) / width;
    out.at_bound = frac < detail::kBoundFraction || frac > 1.0 - detail::kBoundFraction;
    return out;
}

/// Bi-exponential fit with D fixed to adc.adc. Returns nullopt when the
/// b = 0 intensity is not positive or the solver diverges.
inline std::optional<IvimFit> fit_ivim(const VoxelSignal& sig, const AdcFit& adc, const IvimFitConfig& cfg = {}) {
    if (sig.bvalues.size() != sig.intensities.size()) {
        throw DimensionError("voxel signal has mismatched b-value and intensity counts");
    }
    if (!(adc.adc > 0.0) || !std::isfinite(adc.adc)) return std::nullopt;
    const std::size_t n = sig.bvalues.size();
    if (n < 3) return std::nullopt;

    double s0_sum = 0.0;
    std::size_t s0_n = 0;
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(sig.intensities[i])) return std::nullopt;
        if (sig.bvalues[i] < kBValueTolerance) {
            s0_sum += sig.intensities[i];
            ++s0_n;
        }
        scale = std::max(scale, std::abs(sig.intensities[i]));
    }
    if (s0_n == 0 || !(s0_sum > 0.0) || !(scale > 0.0)) return std::nullopt;

    const double d = adc.adc;
    const double s0_init = s0_sum / static_cast<double>(s0_n);
    const double f0 = std::clamp(1.0 - adc.s0_high / s0_init, 0.01, 0.99);
    const bool capped = std::isfinite(cfg.d_star_hi) && cfg.d_star_hi > d;
    double dstar0 = std::max(10.0 * d, d + 1e-3);
    if (capped) dstar0 = std::min(dstar0, 0.5 * (d + cfg.d_star_hi));

    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = sig.intensities[i] / scale;
    const auto bv = sig.bvalues;

    lm::FitProblem problem;
    problem.residual_count = n;
    problem.initial = {s0_init / scale, f0, dstar0};
    problem.transforms = {lm::Transform::positive(), lm::Transform::logistic(0.0, 1.0),
                          capped ? lm::Transform::logistic(d, cfg.d_star_hi) : lm::Transform::at_least(d)};
    problem.residual = [&](std::span<const double> p, std::span<double> r) {
        for (std::size_t i = 0; i < n; ++i) r[i] = ivim_signal(bv[i], p[0], p[1], p[2], d) - y[i];
    };
    const auto res = lm::fit(problem, cfg.solver);
    if (res.reason == lm::Termination::Diverged) return std::nullopt;

    IvimFit out;
    out.s0 = res.params[0] * scale;
    out.f = res.params[1];
    out.d_star = res.params[2];
    out.at_bound = capped && (out.d_star - d) / (cfg.d_star_hi - d) > 1.0 - detail::kBoundFraction;
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = ivim_signal(bv[i], out.s0, out.f, out.d_star, d) - sig.intensities[i];
        ss += e * e;
    }
    out.residual = std::sqrt(ss / static_cast<double>(n)) / out.s0;
    return out;
}

struct FitLog {
    std::size_t voxels_fitted = 0;
    std::size_t voxels_failed = 0;
    std::size_t boundary_hits = 0;
    double wall_time = 0.0;  // seconds
};

struct VolumeFit {
    IvimMaps maps;
    FitLog log;
};

inline unsigned default_thread_count() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/// Fits every masked voxel. Each voxel writes only its own output slot, so
/// the maps do not depend on thread count or visit order.
inline VolumeFit fit_volume(const DwiSeries& series, const BinaryMask& mask, const IvimFitConfig& cfg = {},
                            unsigned threads = 1) {
    if (!mask.same_grid(series.dims(), series.spacing())) {
        throw DimensionError("mask grid " + mask.dims().str() + " does not match series grid " +
                             series.dims().str());
    }
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();

    std::vector<std::size_t> voxels;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.contains(i)) voxels.push_back(i);

    VolumeFit out{IvimMaps(series.dims(), series.spacing(), mask), {}};
    std::vector<std::uint8_t> status(voxels.size(), 0);  // 1 fitted, 2 fitted at an ADC or D* bound
    const auto& bvals = series.bvalues();

    auto work = [&](std::size_t begin, std::size_t end) {
        std::vector<double> signal(series.frame_count());
        for (std::size_t k = begin; k < end; ++k) {
            const std::size_t v = voxels[k];
            for (std::size_t t = 0; t < signal.size(); ++t) signal[t] = series.frames()[t][v];
            const VoxelSignal sig{bvals, signal};
            const auto a = fit_adc(sig, cfg);
            if (!a) continue;
            const auto p = fit_ivim(sig, *a, cfg);
            if (!p) continue;
            out.maps.s0[v] = p->s0;
            out.maps.f[v] = p->f;
            out.maps.d_star[v] = p->d_star;
            out.maps.adc[v] = a->adc;
            out.maps.residual[v] = p->residual;
            status[k] = (a->at_bound || p->at_bound) ? 2 : 1;
        }
    };

    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(voxels.size(), 1))));
    if (threads == 1) {
        work(0, voxels.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (voxels.size() + threads - 1) / threads;
        for (unsigned t = 0; t < threads; ++t) {
            const std::size_t b = std::min(voxels.size(), t * chunk);
            const std::size_t e = std::min(voxels.size(), b + chunk);
            pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }

    for (auto s : status) {
        if (s == 0) {
            ++out.log.voxels_failed;
        } else {
            ++out.log.voxels_fitted;
            if (s == 2) ++out.log.boundary_hits;
        }
    }
    out.log.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

struct ParamSummary {
    double mean = 0.0;
    double sd = 0.0;  // population
    std::size_t count = 0;
    double cv = kUnfitted;       // population sd / mean; NaN when undefined
    double entropy = kUnfitted;  // bits
};

struct MapSummary {
    bool empty = true;  // no fitted voxel: every statistic is meaningless
    double volume_ml = 0.0;
    ParamSummary s0, f, d_star, adc, residual;
};

inline ParamSummary summarize_values(std::span<const double> v, std::size_t entropy_bins) {
    ParamSummary s;
    s.count = v.size();
    if (v.empty()) return s;
    s.mean = stats::mean(v);
    s.sd = stats::sd(v, stats::SdKind::Population);
    if (v.size() >= 2 && s.mean != 0.0) s.cv = s.sd / s.mean;
    s.entropy = stats::shannon_entropy(v, entropy_bins);
    return s;
}

/// Statistics over masked voxels that carry a fitted value.
inline MapSummary summarize(const IvimMaps& maps, std::size_t entropy_bins = 64) {
    MapSummary out;
    out.volume_ml = mask_volume_ml(maps.mask);
    std::vector<double> s0, f, ds, adc, res;
    for (std::size_t i = 0; i < maps.mask.size(); ++i) {
        if (!maps.mask.contains(i) || is_unfitted(maps.s0[i])) continue;
        s0.push_back(maps.s0[i]);
        f.push_back(maps.f[i]);
        ds.push_back(maps.d_star[i]);
        adc.push_back(maps.adc[i]);
        res.push_back(maps.residual[i]);
    }
    if (s0.empty()) return out;
    out.empty = false;
    out.s0 = summarize_values(s0, entropy_bins);
    out.f = summarize_values(f, entropy_bins);
    out.d_star = summarize_values(ds, entropy_bins);
    out.adc = summarize_values(adc, entropy_bins);
    out.residual = summarize_values(res, entropy_bins);
    return out;
}

}  // namespace ivimlab
