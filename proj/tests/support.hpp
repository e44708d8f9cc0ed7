#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "ivimlab/grid.hpp"

namespace testing_support {

using ivimlab::BinaryMask;
using ivimlab::Dims;
using ivimlab::VoxelSpacing;

inline BinaryMask random_mask(std::mt19937_64& rng, const Dims& d, const VoxelSpacing& s, double density) {
    BinaryMask m(d, s);
    std::bernoulli_distribution on(density);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = on(rng) ? 1 : 0;
    return m;
}

// Blobby masks: a random box, then random voxels toggled.
inline BinaryMask random_blob(std::mt19937_64& rng, const Dims& d, const VoxelSpacing& s) {
    BinaryMask m(d, s);
    auto span = [&](std::size_t n) {
        std::uniform_int_distribution<std::size_t> a(0, n - 1);
        std::size_t lo = a(rng), hi = a(rng);
        if (lo > hi) std::swap(lo, hi);
        return std::pair{lo, hi};
    };
    const auto [z0, z1] = span(d.nz);
    const auto [y0, y1] = span(d.ny);
    const auto [x0, x1] = span(d.nx);
    for (std::size_t z = z0; z <= z1; ++z)
        for (std::size_t y = y0; y <= y1; ++y)
            for (std::size_t x = x0; x <= x1; ++x) m[d.index(z, y, x)] = 1;
    std::bernoulli_distribution flip(0.05);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (flip(rng)) m[i] = m[i] ? 0 : 1;
    return m;
}

inline Dims random_dims(std::mt19937_64& rng, std::size_t max_side) {
    std::uniform_int_distribution<std::size_t> side(1, max_side);
    return {side(rng), side(rng), side(rng)};
}

inline double brute_dice(const BinaryMask& a, const BinaryMask& b) {
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] ? 1 : 0;
        nb += b[i] ? 1 : 0;
        both += (a[i] && b[i]) ? 1 : 0;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

// Every voxel of a against every voxel of b.
inline double brute_directed(const BinaryMask& a, const BinaryMask& b) {
    const auto& d = a.dims();
    const auto& s = a.spacing();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i]) continue;
        const double zi = static_cast<double>(i / (d.ny * d.nx));
        const double yi = static_cast<double>((i / d.nx) % d.ny);
        const double xi = static_cast<double>(i % d.nx);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (!b[j]) continue;
            const double dz = (zi - static_cast<double>(j / (d.ny * d.nx))) * s.dz;
            const double dy = (yi - static_cast<double>((j / d.nx) % d.ny)) * s.dy;
            const double dx = (xi - static_cast<double>(j % d.nx)) * s.dx;
            best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
        }
        worst = std::max(worst, best);
    }
    return worst;
}

inline double brute_hausdorff(const BinaryMask& a, const BinaryMask& b) {
    return std::max(brute_directed(a, b), brute_directed(b, a));
}

inline double t_density(double x, double dof) {
    const double c = std::lgamma(0.5 * (dof + 1)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * M_PI);
    return std::exp(c - 0.5 * (dof + 1) * std::log1p(x * x / dof));
}

// Composite Simpson from 0 to t, independent of the incomplete beta route.
inline double t_cdf_simpson(double t, double dof) {
    const int n = 20000;
    const double h = t / n;
    double acc = t_density(0, dof) + t_density(t, dof);
    for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * t_density(i * h, dof);
    return 0.5 + acc * h / 3.0;
}

// Two-sided paired t p-value by direct summation and numerical integration.
inline double paired_t_p_reference(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double md = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) md += (y[i] - x[i]) / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) ss += (y[i] - x[i] - md) * (y[i] - x[i] - md);
    const double t = md / std::sqrt(ss / (n - 1) / n);
    return 2.0 * (1.0 - t_cdf_simpson(std::abs(t), n - 1));
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("ivimlab_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace testing_support
