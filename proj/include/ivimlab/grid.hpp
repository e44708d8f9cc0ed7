#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ivimlab/error.hpp"

namespace ivimlab {

// Value stored in parameter maps at voxels that were not (successfully) fitted.
inline constexpr double kUnfitted = std::numeric_limits<double>::quiet_NaN();

inline bool is_unfitted(double v) noexcept { return std::isnan(v); }

// b-values closer than this are the same diffusion weighting.
inline constexpr double kBValueTolerance = 1e-9;

/// Millimetres per voxel, in (z, y, x) order.
struct VoxelSpacing {
    double dz = 1.0;
    double dy = 1.0;
    double dx = 1.0;

    VoxelSpacing() = default;
    VoxelSpacing(double z, double y, double x) : dz(z), dy(y), dx(x) {
        if (!(dz > 0.0) || !(dy > 0.0) || !(dx > 0.0) || !std::isfinite(dz) ||
            !std::isfinite(dy) || !std::isfinite(dx)) {
            throw ArgumentError("voxel spacing must be finite and strictly positive");
        }
    }

    double voxel_volume_mm3() const noexcept { return dz * dy * dx; }

    friend bool operator==(const VoxelSpacing&, const VoxelSpacing&) = default;
};

/// Grid extent in (z, y, x) order; x varies fastest in memory.
struct Dims {
    std::size_t nz = 0;
    std::size_t ny = 0;
    std::size_t nx = 0;

    std::size_t voxels() const noexcept { return nz * ny * nx; }
    bool empty() const noexcept { return voxels() == 0; }

    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
        return (z * ny + y) * nx + x;
    }

    bool contains(std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) const noexcept {
        return z >= 0 && y >= 0 && x >= 0 && static_cast<std::size_t>(z) < nz &&
               static_cast<std::size_t>(y) < ny && static_cast<std::size_t>(x) < nx;
    }

    std::string str() const {
        std::ostringstream os;
        os << nz << "x" << ny << "x" << nx;
        return os.str();
    }

    friend bool operator==(const Dims&, const Dims&) = default;
};

namespace detail {

inline void require_grid(const Dims& dims) {
    if (dims.empty()) {
        throw ArgumentError("grid dimensions must all be positive, got " + dims.str());
    }
}

}  // namespace detail

// Shared base for everything living on a (dims, spacing) lattice.
template <typename T>
class Lattice {
public:
    using value_type = T;

    Lattice() = default;
    Lattice(Dims dims, VoxelSpacing spacing, T fill = T{})
        : dims_(dims), spacing_(spacing), data_(dims.voxels(), fill) {
        detail::require_grid(dims_);
    }
    Lattice(Dims dims, VoxelSpacing spacing, std::vector<T> data)
        : dims_(dims), spacing_(spacing), data_(std::move(data)) {
        detail::require_grid(dims_);
        if (data_.size() != dims_.voxels()) {
            throw DimensionError("data length " + std::to_string(data_.size()) +
                                 " does not match grid " + dims_.str());
        }
    }

    const Dims& dims() const noexcept { return dims_; }
    const VoxelSpacing& spacing() const noexcept { return spacing_; }
    std::size_t size() const noexcept { return data_.size(); }

    const std::vector<T>& data() const noexcept { return data_; }
    std::vector<T>& data() noexcept { return data_; }

    T operator[](std::size_t i) const { return data_[i]; }
    decltype(auto) operator[](std::size_t i) { return data_[i]; }

    T at(std::size_t z, std::size_t y, std::size_t x) const {
        check(z, y, x);
        return data_[dims_.index(z, y, x)];
    }
    void set(std::size_t z, std::size_t y, std::size_t x, T v) {
        check(z, y, x);
        data_[dims_.index(z, y, x)] = v;
    }

    bool same_grid(const Dims& d, const VoxelSpacing& s) const noexcept {
        return dims_ == d && spacing_ == s;
    }
    template <typename U>
    bool same_grid(const Lattice<U>& other) const noexcept {
        return same_grid(other.dims(), other.spacing());
    }

private:
    void check(std::size_t z, std::size_t y, std::size_t x) const {
        if (z >= dims_.nz || y >= dims_.ny || x >= dims_.nx) {
            throw ArgumentError("voxel index out of range for grid " + dims_.str());
        }
    }

    Dims dims_{};
    VoxelSpacing spacing_{};
    std::vector<T> data_;
};

using Volume3D = Lattice<double>;

class BinaryMask : public Lattice<std::uint8_t> {
public:
    using Lattice<std::uint8_t>::Lattice;

    bool contains(std::size_t i) const { return (*this)[i] != 0; }

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(
            std::count_if(data().begin(), data().end(), [](std::uint8_t v) { return v != 0; }));
    }
};

template <typename A, typename B>
void require_same_grid(const Lattice<A>& a, const Lattice<B>& b, const char* what) {
    if (!a.same_grid(b)) {
        throw DimensionError(std::string(what) + ": grids differ (" + a.dims().str() + " vs " +
                             b.dims().str() + ")");
    }
}

/// Frames of a diffusion-weighted acquisition, one b-value (s/mm²) per frame.
class DwiSeries {
public:
    DwiSeries(std::vector<Volume3D> frames, std::vector<double> bvalues)
        : frames_(std::move(frames)), bvalues_(std::move(bvalues)) {
        if (frames_.empty()) throw ArgumentError("DWI series needs at least one frame");
        if (frames_.size() != bvalues_.size()) {
            throw DimensionError("DWI series has " + std::to_string(frames_.size()) +
                                 " frames but " + std::to_string(bvalues_.size()) + " b-values");
        }
        for (const auto& f : frames_) require_same_grid(frames_.front(), f, "DWI frames");
        bool has_b0 = false;
        for (double b : bvalues_) {
            if (!std::isfinite(b) || b < 0.0) throw ArgumentError("b-values must be finite and non-negative");
            has_b0 = has_b0 || b < kBValueTolerance;
        }
        if (!has_b0) throw ArgumentError("DWI series needs at least one b=0 frame");
    }

    const std::vector<Volume3D>& frames() const noexcept { return frames_; }
    const std::vector<double>& bvalues() const noexcept { return bvalues_; }
    std::size_t frame_count() const noexcept { return frames_.size(); }
    const Dims& dims() const noexcept { return frames_.front().dims(); }
    const VoxelSpacing& spacing() const noexcept { return frames_.front().spacing(); }

    // Intensity of every frame at one voxel, in frame order.
    std::vector<double> voxel_signal(std::size_t i) const {
        std::vector<double> s(frames_.size());
        for (std::size_t k = 0; k < frames_.size(); ++k) s[k] = frames_[k][i];
        return s;
    }

private:
    std::vector<Volume3D> frames_;
    std::vector<double> bvalues_;
};

/// Fitted IVIM parameter volumes; unfitted voxels hold kUnfitted.
struct IvimMaps {
    Volume3D s0;
    Volume3D f;
    Volume3D d_star;
    Volume3D adc;
    Volume3D residual;
    BinaryMask mask;

    IvimMaps(Dims dims, VoxelSpacing spacing, BinaryMask fit_mask)
        : s0(dims, spacing, kUnfitted),
          f(dims, spacing, kUnfitted),
          d_star(dims, spacing, kUnfitted),
          adc(dims, spacing, kUnfitted),
          residual(dims, spacing, kUnfitted),
          mask(std::move(fit_mask)) {
        require_same_grid(s0, mask, "IVIM maps");
    }

    const Dims& dims() const noexcept { return s0.dims(); }
    const VoxelSpacing& spacing() const noexcept { return s0.spacing(); }
};

inline double mask_volume_ml(const BinaryMask& mask) {
    return static_cast<double>(mask.voxel_count()) * mask.spacing().voxel_volume_mm3() / 1000.0;
}

/// Replaces frames that share a b-value by their voxel-wise mean; one frame
/// per distinct b-value in ascending order.
inline DwiSeries average_by_bvalue(const DwiSeries& series) {
    const auto& bv = series.bvalues();
    std::vector<std::size_t> order(bv.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return bv[a] < bv[b]; });

    std::vector<Volume3D> frames;
    std::vector<double> bvalues;
    std::size_t k = 0;
    while (k < order.size()) {
        const double b_ref = bv[order[k]];
        std::size_t end = k;
        while (end < order.size() && bv[order[end]] - b_ref < kBValueTolerance) ++end;

        Volume3D mean = series.frames()[order[k]];
        if (end - k > 1) {
            auto& acc = mean.data();
            for (std::size_t j = k + 1; j < end; ++j) {
                const auto& src = series.frames()[order[j]].data();
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
            }
            const double n = static_cast<double>(end - k);
            for (double& v : acc) v /= n;
        }
        frames.push_back(std::move(mean));
        bvalues.push_back(b_ref);
        k = end;
    }
    return DwiSeries(std::move(frames), std::move(bvalues));
}

}  // namespace ivimlab
