#pragma once

// Minimal NIfTI-1 single-file (.nii) reader/writer plus the FSL-style .bval
// sidecar. Little-endian, uncompressed, datatypes uint8/int16/float32/float64.

#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ivimlab/error.hpp"
#include "ivimlab/grid.hpp"

namespace ivimlab::nifti {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

enum class Datatype : std::int16_t {
    UInt8 = 2,
    Int16 = 4,
    Float32 = 16,
    Float64 = 64,
};

inline int bits_per_voxel(Datatype t) {
    switch (t) {
        case Datatype::UInt8: return 8;
        case Datatype::Int16: return 16;
        case Datatype::Float32: return 32;
        case Datatype::Float64: return 64;
    }
    return 0;
}

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::size_t kMinVoxOffset = 352;

struct Header {
    std::array<std::int16_t, 8> dim{};  // dim[0] = rank
    Datatype datatype = Datatype::Float32;
    std::array<float, 8> pixdim{};
    float vox_offset = static_cast<float>(kMinVoxOffset);
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;

    std::size_t frames() const { return dim[0] >= 4 ? static_cast<std::size_t>(dim[4]) : 1; }
    Dims dims() const {
        auto extent = [&](int k) { return dim[0] >= k ? static_cast<std::size_t>(dim[k]) : std::size_t{1}; };
        return {extent(3), extent(2), extent(1)};
    }
    VoxelSpacing spacing() const {
        auto step = [&](int k) { return dim[0] >= k ? static_cast<double>(pixdim[k]) : 1.0; };
        return {step(3), step(2), step(1)};
    }
};

/// Decoded image: header plus scaled voxel values, frame-major then z, y, x.
struct Image {
    Header header;
    std::vector<double> values;
};

namespace detail {

template <typename T>
T load(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <typename T>
void store(char* p, T v) {
    std::memcpy(p, &v, sizeof(T));
}

inline std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes through a sibling temporary and renames it into place.
inline void write_atomically(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move output into place at " + path.string());
    }
}

}  // namespace detail

inline Header parse_header(const std::vector<char>& bytes, const std::string& origin) {
    using detail::load;
    auto fail = [&](const std::string& field, const std::string& why) -> FormatError {
        return FormatError(origin + ": invalid NIfTI header field '" + field + "': " + why);
    };
    if (bytes.size() < static_cast<std::size_t>(kHeaderSize)) throw fail("sizeof_hdr", "file shorter than 348 bytes");
    const char* p = bytes.data();

    const auto sizeof_hdr = load<std::int32_t>(p);
    if (sizeof_hdr != kHeaderSize) {
        const auto u = static_cast<std::uint32_t>(sizeof_hdr);
        const std::uint32_t swapped = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
        if (swapped == static_cast<std::uint32_t>(kHeaderSize)) {
            throw fail("sizeof_hdr", "big-endian files are not supported");
        }
        throw fail("sizeof_hdr", "expected 348, got " + std::to_string(sizeof_hdr));
    }
    if (std::memcmp(p + 344, "n+1\0", 4) != 0) throw fail("magic", "expected \"n+1\" single-file magic");

    Header h;
    for (int k = 0; k < 8; ++k) h.dim[static_cast<std::size_t>(k)] = load<std::int16_t>(p + 40 + 2 * k);
    if (h.dim[0] < 1 || h.dim[0] > 4) throw fail("dim[0]", "rank " + std::to_string(h.dim[0]) + " outside 1..4");
    for (int k = 1; k <= h.dim[0]; ++k) {
        if (h.dim[static_cast<std::size_t>(k)] < 1) throw fail("dim[" + std::to_string(k) + "]", "must be positive");
    }

    const auto code = load<std::int16_t>(p + 70);
    switch (code) {
        case 2: case 4: case 16: case 64: h.datatype = static_cast<Datatype>(code); break;
        default:
            throw UnsupportedTypeError(origin + ": unsupported NIfTI datatype code " + std::to_string(code) +
                                       " (supported: uint8, int16, float32, float64)");
    }
    const auto bitpix = load<std::int16_t>(p + 72);
    if (bitpix != bits_per_voxel(h.datatype)) throw fail("bitpix", "does not match datatype");

    for (int k = 0; k < 8; ++k) h.pixdim[static_cast<std::size_t>(k)] = load<float>(p + 76 + 4 * k);
    for (int k = 1; k <= std::min<int>(h.dim[0], 3); ++k) {
        const float s = h.pixdim[static_cast<std::size_t>(k)];
        if (!(s > 0.0f) || !std::isfinite(s)) throw fail("pixdim[" + std::to_string(k) + "]", "spacing must be positive");
    }
    h.vox_offset = load<float>(p + 108);
    if (!(h.vox_offset >= static_cast<float>(kMinVoxOffset)) || h.vox_offset != std::floor(h.vox_offset)) {
        throw fail("vox_offset", "must be an integer >= 352");
    }
    h.scl_slope = load<float>(p + 112);
    h.scl_inter = load<float>(p + 116);
    if (!std::isfinite(h.scl_slope) || !std::isfinite(h.scl_inter)) throw fail("scl_slope", "scaling must be finite");
    return h;
}

inline Image decode(const std::vector<char>& bytes, const std::string& origin) {
    Image img;
    img.header = parse_header(bytes, origin);
    const Header& h = img.header;
    const std::size_t nvox = h.dims().voxels() * h.frames();
    const std::size_t width = static_cast<std::size_t>(bits_per_voxel(h.datatype)) / 8;
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    if (bytes.size() < offset + nvox * width) {
        throw FormatError(origin + ": data section truncated (expected " + std::to_string(nvox * width) +
                          " bytes after offset " + std::to_string(offset) + ")");
    }
    const char* p = bytes.data() + offset;
    const bool scaled = h.scl_slope != 0.0f;
    const double slope = h.scl_slope, inter = h.scl_inter;
    img.values.resize(nvox);
    for (std::size_t i = 0; i < nvox; ++i) {
        double v = 0.0;
        switch (h.datatype) {
            case Datatype::UInt8: v = detail::load<std::uint8_t>(p + i); break;
            case Datatype::Int16: v = detail::load<std::int16_t>(p + 2 * i); break;
            case Datatype::Float32: v = detail::load<float>(p + 4 * i); break;
            case Datatype::Float64: v = detail::load<double>(p + 8 * i); break;
        }
        img.values[i] = scaled ? slope * v + inter : v;
    }
    return img;
}

inline Image read_image(const std::filesystem::path& path) {
    return decode(detail::slurp(path), path.string());
}

/// Serialises a 3D or 4D image. Values are cast to the datatype without
/// scaling; integer types must already hold in-range integers.
inline std::string encode(const Dims& dims, const VoxelSpacing& spacing, std::size_t frames,
                          const std::vector<double>& values, Datatype type) {
    ivimlab::detail::require_grid(dims);
    if (frames == 0) throw ArgumentError("image needs at least one frame");
    if (values.size() != dims.voxels() * frames) throw DimensionError("value count does not match image extent");
    for (std::size_t e : {dims.nx, dims.ny, dims.nz, frames}) {
        if (e > 32767) throw ArgumentError("image extent exceeds NIfTI-1 limit of 32767");
    }

    if (type == Datatype::UInt8 || type == Datatype::Int16) {
        const double lo = type == Datatype::UInt8 ? 0.0 : -32768.0;
        const double hi = type == Datatype::UInt8 ? 255.0 : 32767.0;
        for (double v : values) {
            if (!(v >= lo && v <= hi) || v != std::floor(v)) {
                throw ArgumentError("value " + std::to_string(v) + " not representable in the integer datatype");
            }
        }
    }

    const std::size_t width = static_cast<std::size_t>(bits_per_voxel(type)) / 8;
    std::string buf(kMinVoxOffset + values.size() * width, '\0');
    char* p = buf.data();
    using detail::store;
    store<std::int32_t>(p, kHeaderSize);
    const std::int16_t rank = frames > 1 ? 4 : 3;
    const std::array<std::int16_t, 8> dim{rank,
                                          static_cast<std::int16_t>(dims.nx),
                                          static_cast<std::int16_t>(dims.ny),
                                          static_cast<std::int16_t>(dims.nz),
                                          static_cast<std::int16_t>(frames),
                                          1, 1, 1};
    for (int k = 0; k < 8; ++k) store<std::int16_t>(p + 40 + 2 * k, dim[static_cast<std::size_t>(k)]);
    store<std::int16_t>(p + 70, static_cast<std::int16_t>(type));
    store<std::int16_t>(p + 72, static_cast<std::int16_t>(bits_per_voxel(type)));
    const std::array<float, 8> pixdim{1.0f,
                                      static_cast<float>(spacing.dx),
                                      static_cast<float>(spacing.dy),
                                      static_cast<float>(spacing.dz),
                                      1.0f, 1.0f, 1.0f, 1.0f};
    for (int k = 0; k < 8; ++k) store<float>(p + 76 + 4 * k, pixdim[static_cast<std::size_t>(k)]);
    store<float>(p + 108, static_cast<float>(kMinVoxOffset));
    store<float>(p + 112, 0.0f);  // scl_slope: no scaling
    store<float>(p + 116, 0.0f);
    p[123] = 2 | 8;               // xyzt_units: mm, s
    store<std::int16_t>(p + 252, 0);  // qform_code
    store<std::int16_t>(p + 254, 1);  // sform_code: scanner-anchored diagonal
    store<float>(p + 280, pixdim[1]);
    store<float>(p + 300, pixdim[2]);
    store<float>(p + 320, pixdim[3]);
    std::memcpy(p + 344, "n+1\0", 4);

    char* data = p + kMinVoxOffset;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        switch (type) {
            case Datatype::UInt8: store<std::uint8_t>(data + i, static_cast<std::uint8_t>(v)); break;
            case Datatype::Int16: store<std::int16_t>(data + 2 * i, static_cast<std::int16_t>(v)); break;
            case Datatype::Float32: store<float>(data + 4 * i, static_cast<float>(v)); break;
            case Datatype::Float64: store<double>(data + 8 * i, v); break;
        }
    }
    return buf;
}

inline void write_volume(const Volume3D& volume, const std::filesystem::path& path,
                         Datatype type = Datatype::Float32) {
    detail::write_atomically(path, encode(volume.dims(), volume.spacing(), 1, volume.data(), type));
}

inline void write_mask(const BinaryMask& mask, const std::filesystem::path& path) {
    std::vector<double> v(mask.data().begin(), mask.data().end());
    for (double& x : v) x = x != 0.0 ? 1.0 : 0.0;
    detail::write_atomically(path, encode(mask.dims(), mask.spacing(), 1, v, Datatype::UInt8));
}

inline void write_series(const DwiSeries& series, const std::filesystem::path& path,
                         Datatype type = Datatype::Float32) {
    std::vector<double> v;
    v.reserve(series.dims().voxels() * series.frame_count());
    for (const auto& f : series.frames()) v.insert(v.end(), f.data().begin(), f.data().end());
    detail::write_atomically(path, encode(series.dims(), series.spacing(), series.frame_count(), v, type));
}

inline Volume3D read_volume(const std::filesystem::path& path) {
    Image img = read_image(path);
    if (img.header.frames() != 1) {
        throw DimensionError(path.string() + ": expected a 3D volume, found " + std::to_string(img.header.frames()) +
                             " frames");
    }
    return Volume3D(img.header.dims(), img.header.spacing(), std::move(img.values));
}

/// Any non-zero voxel is inside the mask.
inline BinaryMask read_mask(const std::filesystem::path& path) {
    const Volume3D v = read_volume(path);
    BinaryMask m(v.dims(), v.spacing());
    for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] != 0.0 ? 1 : 0;
    return m;
}

// ---------------------------------------------------------------------------
// b-value sidecar

inline std::vector<double> parse_bvals(const std::string& text, const std::string& origin = "b-values") {
    std::vector<double> out;
    std::size_t i = 0, token = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= text.size()) break;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        const std::string_view tok(text.data() + i, j - i);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
            throw ParseError(origin + ": token " + std::to_string(token + 1) + " ('" + std::string(tok) +
                                 "') is not a number",
                             token);
        }
        if (v < 0.0) {
            throw ParseError(origin + ": token " + std::to_string(token + 1) + " ('" + std::string(tok) +
                                 "') is negative",
                             token);
        }
        out.push_back(v);
        ++token;
        i = j;
    }
    return out;
}

inline std::vector<double> read_bvals(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open b-value file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_bvals(ss.str(), path.string());
}

inline void write_bvals(const std::vector<double>& b, const std::filesystem::path& path) {
    std::string s;
    for (std::size_t i = 0; i < b.size(); ++i) {
        char buf[64];
        const auto r = std::to_chars(buf, buf + sizeof buf, b[i]);
        if (i) s += ' ';
        s.append(buf, r.ptr);
    }
    s += '\n';
    detail::write_atomically(path, s);
}

/// Same basename with a .bval extension.
inline std::filesystem::path bval_sidecar(const std::filesystem::path& image) {
    auto p = image;
    p.replace_extension(".bval");
    return p;
}

inline DwiSeries read_series(const std::filesystem::path& image, const std::filesystem::path& bvals) {
    Image img = read_image(image);
    const auto b = read_bvals(bvals);
    const std::size_t frames = img.header.frames();
    if (b.size() != frames) {
        throw DimensionError(bvals.string() + " lists " + std::to_string(b.size()) + " b-values but " +
                             image.string() + " has " + std::to_string(frames) + " frames");
    }
    const Dims dims = img.header.dims();
    const VoxelSpacing spacing = img.header.spacing();
    std::vector<Volume3D> vols;
    vols.reserve(frames);
    const std::size_t nv = dims.voxels();
    for (std::size_t t = 0; t < frames; ++t) {
        std::vector<double> v(img.values.begin() + static_cast<std::ptrdiff_t>(t * nv),
                              img.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * nv));
        vols.emplace_back(dims, spacing, std::move(v));
    }
    return DwiSeries(std::move(vols), b);
}

}  // namespace ivimlab::nifti
