#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "neurocad/error.hpp"

namespace neurocad {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
    double& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;

    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

struct Triangle {
    Vec3 v0, v1, v2;
    Vec3 normal;              // unit length, or zero when degenerate
    bool degenerate = false;  // zero area; kept but skipped by the voxelizer

    friend bool operator==(const Triangle&, const Triangle&) = default;
};

/// Builds a triangle with its normal taken from the winding order.
Triangle make_triangle(Vec3 v0, Vec3 v1, Vec3 v2);

enum class SourceFormat { stl_binary, stl_ascii, obj };
enum class StlFlavor { binary, ascii };

struct TriangleMesh {
    std::vector<Triangle> triangles;
    SourceFormat source_format = SourceFormat::stl_binary;

    std::size_t degenerate_count() const;
    friend bool operator==(const TriangleMesh&, const TriangleMesh&) = default;
};

struct BoundingBox {
    Vec3 min;
    Vec3 max;

    Vec3 extent() const { return max - min; }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Reads ASCII or binary STL. Files starting with "solid" are tried as
/// ASCII first and fall back to binary when the ASCII grammar fails.
TriangleMesh parse_stl(std::span<const std::uint8_t> bytes);

/// Reads `v` and `f` statements; everything else is skipped.
TriangleMesh parse_obj(std::string_view text);

std::vector<std::uint8_t> write_stl(const TriangleMesh& mesh, StlFlavor flavor = StlFlavor::binary);

BoundingBox bounding_box(const TriangleMesh& mesh);

std::string_view to_string(SourceFormat format);

/// Dispatches on the file extension (.stl / .obj, case-insensitive).
TriangleMesh load_mesh_file(const std::string& path);
TriangleMesh parse_mesh(std::span<const std::uint8_t> bytes, SourceFormat hint);

/// By file extension, case-insensitive: .stl or .obj.
std::optional<SourceFormat> format_from_filename(std::string_view filename);

}  // namespace neurocad
