#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ivimlab/error.hpp"
#include "ivimlab/grid.hpp"

namespace ivimlab {

/// OLP: intersection. AVG: strict majority (> 50%). LC: union.
enum class FusionStrategy { Olp, Avg, Lc };

inline const char* to_string(FusionStrategy s) {
    switch (s) {
        case FusionStrategy::Olp: return "olp";
        case FusionStrategy::Avg: return "avg";
        case FusionStrategy::Lc: return "lc";
    }
    return "?";
}

inline FusionStrategy parse_fusion_strategy(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "olp") return FusionStrategy::Olp;
    if (lower == "avg") return FusionStrategy::Avg;
    if (lower == "lc") return FusionStrategy::Lc;
    throw ArgumentError("unknown fusion strategy '" + std::string(name) + "' (expected olp, avg or lc)");
}

inline BinaryMask fuse(std::span<const BinaryMask> masks, FusionStrategy strategy) {
    if (masks.empty()) throw ArgumentError("fusion needs at least one mask");
    for (const auto& m : masks) require_same_grid(masks.front(), m, "fusion");

    const std::size_t n = masks.size();
    BinaryMask out(masks.front().dims(), masks.front().spacing());
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t votes = 0;
        for (const auto& m : masks) votes += m.contains(i) ? 1 : 0;
        bool keep = false;
        switch (strategy) {
            case FusionStrategy::Olp: keep = votes == n; break;
            case FusionStrategy::Avg: keep = 2 * votes > n; break;
            case FusionStrategy::Lc: keep = votes > 0; break;
        }
        out[i] = keep ? 1 : 0;
    }
    return out;
}

/// 2|A ∩ B| / (|A| + |B|); two empty masks agree perfectly (1.0).
inline double dice(const BinaryMask& a, const BinaryMask& b) {
    require_same_grid(a, b, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a.contains(i), y = b.contains(i);
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

namespace detail {

inline constexpr std::array<std::array<int, 3>, 6> kFaceNeighbours{{
    {{-1, 0, 0}}, {{1, 0, 0}}, {{0, -1, 0}}, {{0, 1, 0}}, {{0, 0, -1}}, {{0, 0, 1}},
}};

struct Voxel {
    std::ptrdiff_t z, y, x;
};

inline Voxel coords(const Dims& d, std::size_t i) {
    const auto x = static_cast<std::ptrdiff_t>(i % d.nx);
    const auto y = static_cast<std::ptrdiff_t>((i / d.nx) % d.ny);
    const auto z = static_cast<std::ptrdiff_t>(i / (d.nx * d.ny));
    return {z, y, x};
}

inline bool inside(const BinaryMask& m, std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) {
    return m.dims().contains(z, y, x) &&
           m.contains(m.dims().index(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x)));
}

}  // namespace detail

/// Mask voxels with at least one 6-connected neighbour outside the mask.
/// Positions beyond the grid count as background.
inline bool is_boundary_voxel(const BinaryMask& m, std::size_t i) {
    if (!m.contains(i)) return false;
    const auto c = detail::coords(m.dims(), i);
    for (const auto& o : detail::kFaceNeighbours) {
        if (!detail::inside(m, c.z + o[0], c.y + o[1], c.x + o[2])) return true;
    }
    return false;
}

inline std::vector<std::size_t> boundary_voxels(const BinaryMask& m) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (is_boundary_voxel(m, i)) out.push_back(i);
    return out;
}

namespace detail {

inline double voxel_distance_mm(const Dims& d, const VoxelSpacing& s, std::size_t a, std::size_t b) {
    const auto p = coords(d, a);
    const auto q = coords(d, b);
    const double dz = static_cast<double>(p.z - q.z) * s.dz;
    const double dy = static_cast<double>(p.y - q.y) * s.dy;
    const double dx = static_cast<double>(p.x - q.x) * s.dx;
    return std::sqrt(dz * dz + dy * dy + dx * dx);
}

// max over a in from of the distance to the nearest voxel of to. Only the
// boundary of `to` is searched: for a voxel outside `to`, stepping from any
// interior voxel toward it along a differing axis stays inside `to` and gets
// strictly closer, so the nearest voxel is always on the boundary.
inline double directed_hausdorff(const BinaryMask& from, const BinaryMask& to, std::span<const std::size_t> to_boundary) {
    double worst = 0.0;
    for (std::size_t a = 0; a < from.size(); ++a) {
        if (!from.contains(a) || to.contains(a)) continue;
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t b : to_boundary) {
            nearest = std::min(nearest, voxel_distance_mm(from.dims(), from.spacing(), a, b));
            if (nearest <= worst) break;  // cannot raise the running maximum
        }
        worst = std::max(worst, nearest);
    }
    return worst;
}

}  // namespace detail

/// Symmetric Hausdorff distance in mm between voxel centres.
inline double hausdorff(const BinaryMask& a, const BinaryMask& b) {
    require_same_grid(a, b, "hausdorff");
    if (a.voxel_count() == 0 || b.voxel_count() == 0) {
        throw UndefinedError("Hausdorff distance is undefined when a mask is empty");
    }
    const auto ab = boundary_voxels(b);
    const auto ba = boundary_voxels(a);
    return std::max(detail::directed_hausdorff(a, b, ab), detail::directed_hausdorff(b, a, ba));
}

/// One step of 6-connected dilation, repeated `radius` times.
inline BinaryMask dilate(const BinaryMask& m, int radius = 1) {
    if (radius < 0) throw ArgumentError("dilation radius must be non-negative");
    BinaryMask cur = m;
    for (int r = 0; r < radius; ++r) {
        BinaryMask next = cur;
        for (std::size_t i = 0; i < cur.size(); ++i) {
            if (!cur.contains(i)) continue;
            const auto c = detail::coords(cur.dims(), i);
            for (const auto& o : detail::kFaceNeighbours) {
                const auto z = c.z + o[0], y = c.y + o[1], x = c.x + o[2];
                if (cur.dims().contains(z, y, x)) {
                    next[cur.dims().index(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x))] = 1;
                }
            }
        }
        cur = std::move(next);
    }
    return cur;
}

/// One step of 6-connected erosion (outside the grid is background),
/// repeated `radius` times. May produce an empty mask.
inline BinaryMask erode(const BinaryMask& m, int radius = 1) {
    if (radius < 0) throw ArgumentError("erosion radius must be non-negative");
    BinaryMask cur = m;
    for (int r = 0; r < radius; ++r) {
        BinaryMask next = cur;
        for (std::size_t i = 0; i < cur.size(); ++i)
            if (is_boundary_voxel(cur, i)) next[i] = 0;
        cur = std::move(next);
    }
    return cur;
}

}  // namespace ivimlab
