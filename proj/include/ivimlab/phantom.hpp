#pragma once

// Synthetic DWI phantoms with known IVIM truth, used to check the pipeline
// end to end.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ivimlab/error.hpp"
#include "ivimlab/grid.hpp"
#include "ivimlab/ivim.hpp"
#include "ivimlab/mask_ops.hpp"

namespace ivimlab::phantom {

inline const std::vector<double>& default_bvalues() {
    static const std::vector<double> b{0, 10, 20, 50, 100, 200, 400, 600};
    return b;
}

/// How one truth parameter varies over the grid.
struct FieldSpec {
    enum class Kind { Constant, LinearGradient, TwoRegion };
    Kind kind = Kind::Constant;
    double value = 0.0;   // constant value, gradient start, or region for x < nx/2
    double value2 = 0.0;  // gradient end (at x = nx-1) or region for x >= nx/2

    static FieldSpec constant(double v) { return {Kind::Constant, v, v}; }
    static FieldSpec gradient(double from, double to) { return {Kind::LinearGradient, from, to}; }
    static FieldSpec two_region(double left, double right) { return {Kind::TwoRegion, left, right}; }

    double at(std::size_t x, std::size_t nx) const {
        switch (kind) {
            case Kind::Constant: return value;
            case Kind::LinearGradient:
                return nx < 2 ? value : value + (value2 - value) * static_cast<double>(x) / static_cast<double>(nx - 1);
            case Kind::TwoRegion: return 2 * x < nx ? value : value2;
        }
        return value;
    }
    double min() const { return kind == Kind::Constant ? value : std::min(value, value2); }
    double max() const { return kind == Kind::Constant ? value : std::max(value, value2); }
};

enum class NoiseModel { None, Gaussian, Rician };

inline NoiseModel parse_noise_model(const std::string& s) {
    if (s == "none") return NoiseModel::None;
    if (s == "gaussian") return NoiseModel::Gaussian;
    if (s == "rician") return NoiseModel::Rician;
    throw ArgumentError("unknown noise model '" + s + "' (expected none, gaussian or rician)");
}

inline const char* to_string(NoiseModel m) {
    switch (m) {
        case NoiseModel::None: return "none";
        case NoiseModel::Gaussian: return "gaussian";
        case NoiseModel::Rician: return "rician";
    }
    return "?";
}

struct PhantomConfig {
    Dims dims{8, 32, 32};
    VoxelSpacing spacing{7.20, 2.07, 2.07};
    std::vector<double> bvalues = default_bvalues();
    FieldSpec s0 = FieldSpec::constant(100.0);
    FieldSpec f = FieldSpec::constant(0.3);
    FieldSpec d_star = FieldSpec::constant(0.05);
    FieldSpec d = FieldSpec::constant(0.002);
    // Ellipsoid semi-axes as a fraction of each half-extent.
    double mask_fraction = 0.8;
    NoiseModel noise = NoiseModel::None;
    double snr = std::numeric_limits<double>::infinity();
    std::uint64_t seed = 1;

    void validate() const {
        detail::require_grid(dims);
        if (bvalues.empty()) throw ArgumentError("phantom needs at least one b-value");
        if (!(mask_fraction > 0.0)) throw ArgumentError("mask_fraction must be positive");
        if (!(s0.min() > 0.0)) throw ArgumentError("phantom S0 must be positive");
        if (!(f.min() >= 0.0 && f.max() <= 1.0)) throw ArgumentError("phantom f must lie in [0, 1]");
        if (!(d.min() > 0.0)) throw ArgumentError("phantom D must be positive");
        if (noise != NoiseModel::None && !(snr > 0.0)) throw ArgumentError("phantom snr must be positive");
    }
};

struct PhantomBundle {
    DwiSeries series;
    BinaryMask mask;
    IvimMaps truth;
};

inline BinaryMask ellipsoid_mask(const Dims& dims, const VoxelSpacing& spacing, double fraction) {
    BinaryMask m(dims, spacing);
    const double cz = 0.5 * static_cast<double>(dims.nz - 1);
    const double cy = 0.5 * static_cast<double>(dims.ny - 1);
    const double cx = 0.5 * static_cast<double>(dims.nx - 1);
    const double rz = std::max(0.5, fraction * 0.5 * static_cast<double>(dims.nz));
    const double ry = std::max(0.5, fraction * 0.5 * static_cast<double>(dims.ny));
    const double rx = std::max(0.5, fraction * 0.5 * static_cast<double>(dims.nx));
    for (std::size_t z = 0; z < dims.nz; ++z)
        for (std::size_t y = 0; y < dims.ny; ++y)
            for (std::size_t x = 0; x < dims.nx; ++x) {
                const double a = (static_cast<double>(z) - cz) / rz;
                const double b = (static_cast<double>(y) - cy) / ry;
                const double c = (static_cast<double>(x) - cx) / rx;
                m[dims.index(z, y, x)] = a * a + b * b + c * c <= 1.0 ? 1 : 0;
            }
    return m;
}

/// Additive Gaussian noise, or Rician magnitude noise, with
/// sd = (mean masked b=0 intensity) / snr. An infinite snr is a no-op.
inline DwiSeries add_noise(const DwiSeries& series, const BinaryMask& mask, NoiseModel model, double snr,
                           std::uint64_t seed) {
    if (model == NoiseModel::None || std::isinf(snr)) return series;
    if (!(snr > 0.0)) throw ArgumentError("snr must be positive");
    require_same_grid(series.frames().front(), mask, "noise");

    double ref = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < series.frame_count(); ++t) {
        if (series.bvalues()[t] >= kBValueTolerance) continue;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask.contains(i)) {
                ref += series.frames()[t][i];
                ++n;
            }
    }
    if (n == 0) throw ArgumentError("noise reference needs a non-empty mask");
    const double sigma = ref / static_cast<double>(n) / snr;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<Volume3D> frames = series.frames();
    for (auto& fr : frames) {
        for (double& v : fr.data()) {
            const double n1 = noise(rng);
            if (model == NoiseModel::Gaussian) {
                v += n1;
            } else {
                const double n2 = noise(rng);
                v = std::hypot(v + n1, n2);
            }
        }
    }
    return DwiSeries(std::move(frames), series.bvalues());
}

inline PhantomBundle make_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    const Dims& dims = cfg.dims;
    BinaryMask mask = ellipsoid_mask(dims, cfg.spacing, cfg.mask_fraction);
    IvimMaps truth(dims, cfg.spacing, mask);
    std::vector<Volume3D> frames(cfg.bvalues.size(), Volume3D(dims, cfg.spacing, 0.0));

    for (std::size_t z = 0; z < dims.nz; ++z)
        for (std::size_t y = 0; y < dims.ny; ++y)
            for (std::size_t x = 0; x < dims.nx; ++x) {
                const std::size_t i = dims.index(z, y, x);
                if (!mask.contains(i)) continue;
                const double s0 = cfg.s0.at(x, dims.nx);
                const double f = cfg.f.at(x, dims.nx);
                const double ds = cfg.d_star.at(x, dims.nx);
                const double d = cfg.d.at(x, dims.nx);
                if (!(ds >= d)) throw ArgumentError("phantom D* must be at least D everywhere in the mask");
                truth.s0[i] = s0;
                truth.f[i] = f;
                truth.d_star[i] = ds;
                truth.adc[i] = d;
                truth.residual[i] = 0.0;
                for (std::size_t t = 0; t < cfg.bvalues.size(); ++t)
                    frames[t][i] = ivim_signal(cfg.bvalues[t], s0, f, ds, d);
            }

    DwiSeries clean(std::move(frames), cfg.bvalues);
    DwiSeries series = add_noise(clean, mask, cfg.noise, cfg.snr, cfg.seed);
    return {std::move(series), std::move(mask), std::move(truth)};
}

/// Toggles each boundary voxel independently with probability p. Boundary
/// voxels are mask voxels with a 6-connected background neighbour.
inline BinaryMask boundary_flip(const BinaryMask& mask, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("flip probability must lie in [0, 1]");
    BinaryMask out = mask;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i : boundary_voxels(mask)) {
        if (u(rng) < p) out[i] = out[i] ? 0 : 1;
    }
    return out;
}

struct MaskPerturbation {
    enum class Kind { Dilate, Erode, BoundaryFlip };
    Kind kind = Kind::Dilate;
    int radius = 1;
    double p = 0.0;
    std::uint64_t seed = 1;
};

inline BinaryMask perturb_mask(const BinaryMask& mask, const MaskPerturbation& op) {
    switch (op.kind) {
        case MaskPerturbation::Kind::Dilate:
            if (op.radius < 1) throw ArgumentError("dilation radius must be at least 1");
            return dilate(mask, op.radius);
        case MaskPerturbation::Kind::Erode:
            if (op.radius < 1) throw ArgumentError("erosion radius must be at least 1");
            return erode(mask, op.radius);
        case MaskPerturbation::Kind::BoundaryFlip: return boundary_flip(mask, op.p, op.seed);
    }
    return mask;
}

}  // namespace ivimlab::phantom
