#include "neurocad/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace neurocad::shapes {

namespace {

// Flips triangles of a convex part so their winding normal points away from `center`.
TriangleMesh orient_outward(std::vector<std::array<Vec3, 3>> tris, Vec3 center) {
    TriangleMesh mesh;
    mesh.source_format = SourceFormat::stl_binary;
    for (auto& t : tris) {
        const Vec3 n = cross(t[1] - t[0], t[2] - t[0]);
        const Vec3 centroid = (t[0] + t[1] + t[2]) * (1.0 / 3.0);
        if (dot(n, centroid - center) < 0.0) std::swap(t[1], t[2]);
        mesh.triangles.push_back(make_triangle(t[0], t[1], t[2]));
    }
    return mesh;
}

// Convex polygon in the x-y plane extruded from z0 to z1.
TriangleMesh prism(const std::vector<std::pair<double, double>>& polygon, double z0, double z1) {
    std::vector<std::array<Vec3, 3>> tris;
    double cx = 0.0, cy = 0.0;
    for (auto [x, y] : polygon) {
        cx += x;
        cy += y;
    }
    cx /= static_cast<double>(polygon.size());
    cy /= static_cast<double>(polygon.size());
    const std::size_t n = polygon.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto [ax, ay] = polygon[i];
        const auto [bx, by] = polygon[(i + 1) % n];
        const Vec3 a0{ax, ay, z0}, b0{bx, by, z0}, a1{ax, ay, z1}, b1{bx, by, z1};
        tris.push_back({a0, b0, b1});
        tris.push_back({a0, b1, a1});
        tris.push_back({Vec3{cx, cy, z0}, a0, b0});
        tris.push_back({Vec3{cx, cy, z1}, a1, b1});
    }
    return orient_outward(std::move(tris), Vec3{cx, cy, 0.5 * (z0 + z1)});
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

}  // namespace

TriangleMesh box(Vec3 min, Vec3 max) {
    const Vec3 c[8] = {{min.x, min.y, min.z}, {max.x, min.y, min.z}, {max.x, max.y, min.z}, {min.x, max.y, min.z},
                       {min.x, min.y, max.z}, {max.x, min.y, max.z}, {max.x, max.y, max.z}, {min.x, max.y, max.z}};
    static constexpr int kFaces[6][4] = {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4},
                                         {2, 3, 7, 6}, {0, 4, 7, 3}, {1, 2, 6, 5}};
    std::vector<std::array<Vec3, 3>> tris;
    for (const auto& f : kFaces) {
        tris.push_back({c[f[0]], c[f[1]], c[f[2]]});
        tris.push_back({c[f[0]], c[f[2]], c[f[3]]});
    }
    return orient_outward(std::move(tris), (min + max) * 0.5);
}

TriangleMesh cylinder(double radius, double height, int segments) {
    std::vector<std::pair<double, double>> polygon;
    for (int i = 0; i < segments; ++i) {
        const double a = 2.0 * std::numbers::pi * i / segments;
        polygon.emplace_back(radius * std::cos(a), radius * std::sin(a));
    }
    return prism(polygon, -0.5 * height, 0.5 * height);
}

TriangleMesh sphere(double radius, int stacks, int slices) {
    auto point = [&](int i, int j) {
        const double theta = std::numbers::pi * i / stacks;
        const double phi = 2.0 * std::numbers::pi * j / slices;
        return Vec3{radius * std::sin(theta) * std::cos(phi), radius * std::sin(theta) * std::sin(phi),
                    radius * std::cos(theta)};
    };
    std::vector<std::array<Vec3, 3>> tris;
    for (int i = 0; i < stacks; ++i) {
        for (int j = 0; j < slices; ++j) {
            const Vec3 a = point(i, j), b = point(i + 1, j), c = point(i + 1, j + 1), d = point(i, j + 1);
            if (i != 0) tris.push_back({a, b, d});
            if (i != stacks - 1) tris.push_back({b, c, d});
        }
    }
    return orient_outward(std::move(tris), Vec3{});
}

TriangleMesh chamfered_box(double sx, double sy, double sz, double chamfer) {
    const double hx = 0.5 * sx, hy = 0.5 * sy;
    const double c = std::clamp(chamfer, 1e-6, 0.49 * std::min(sx, sy));
    const std::vector<std::pair<double, double>> octagon = {
        {-hx + c, -hy}, {hx - c, -hy}, {hx, -hy + c}, {hx, hy - c},
        {hx - c, hy},   {-hx + c, hy}, {-hx, hy - c}, {-hx, -hy + c}};
    return prism(octagon, -0.5 * sz, 0.5 * sz);
}

TriangleMesh merge(const std::vector<TriangleMesh>& parts) {
    TriangleMesh out;
    out.source_format = SourceFormat::stl_binary;
    for (const auto& p : parts) out.triangles.insert(out.triangles.end(), p.triangles.begin(), p.triangles.end());
    return out;
}

TriangleMesh l_bracket(double length, double height, double width, double thickness) {
    return merge({box({0, 0, 0}, {length, width, thickness}), box({0, 0, 0}, {thickness, width, height})});
}

TriangleMesh cup(double sx, double sy, double sz, double wall) {
    return merge({box({0, 0, 0}, {sx, sy, wall}), box({0, 0, 0}, {wall, sy, sz}), box({sx - wall, 0, 0}, {sx, sy, sz}),
                  box({0, 0, 0}, {sx, wall, sz}), box({0, sy - wall, 0}, {sx, sy, sz})});
}

std::string_view to_string(Kind kind) {
    switch (kind) {
        case Kind::box: return "box";
        case Kind::cylinder: return "cylinder";
        case Kind::sphere: return "sphere";
        case Kind::chamfered_box: return "chamfered_box";
        case Kind::l_bracket: return "l_bracket";
        case Kind::cup: return "cup";
    }
    return "unknown";
}

ProceduralShape random_shape(std::uint64_t seed, std::size_t index) {
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + index);
    ProceduralShape s;
    s.kind = static_cast<Kind>(index % kKindCount);
    s.name = std::string(to_string(s.kind)) + "_" + std::to_string(index);
    switch (s.kind) {
        case Kind::box:
            s.mesh = box({0, 0, 0}, {uniform(rng, 0.1, 1.0), uniform(rng, 0.1, 1.0), uniform(rng, 0.1, 1.0)});
            break;
        case Kind::cylinder:
            s.mesh = cylinder(uniform(rng, 0.05, 0.5), uniform(rng, 0.1, 1.0), 24);
            break;
        case Kind::sphere: {
            // Ellipsoid-like: a sphere squashed along z.
            TriangleMesh m = sphere(0.5, 12, 24);
            const double squash = uniform(rng, 0.1, 1.0);
            for (auto& t : m.triangles) {
                t = make_triangle({t.v0.x, t.v0.y, t.v0.z * squash}, {t.v1.x, t.v1.y, t.v1.z * squash},
                                  {t.v2.x, t.v2.y, t.v2.z * squash});
            }
            s.mesh = std::move(m);
            break;
        }
        case Kind::chamfered_box: {
            const double sx = uniform(rng, 0.2, 1.0), sy = uniform(rng, 0.2, 1.0);
            s.mesh = chamfered_box(sx, sy, uniform(rng, 0.1, 1.0), uniform(rng, 0.05, 0.3) * std::min(sx, sy));
            break;
        }
        case Kind::l_bracket: {
            const double t = uniform(rng, 0.08, 0.25);
            s.mesh = l_bracket(uniform(rng, 0.4, 1.0), uniform(rng, 0.4, 1.0), uniform(rng, 0.1, 1.0), t);
            break;
        }
        case Kind::cup: {
            const double sx = uniform(rng, 0.4, 1.0), sy = uniform(rng, 0.4, 1.0);
            s.mesh = cup(sx, sy, uniform(rng, 0.2, 1.0), uniform(rng, 0.08, 0.15) * std::min(sx, sy) / 0.4);
            break;
        }
    }
    return s;
}

int slenderness_score(const VoxelGrid& grid) {
    const GridDims d = grid.dims();
    int lo[3] = {d.x, d.y, d.z};
    int hi[3] = {-1, -1, -1};
    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                if (!grid.at(x, y, z)) continue;
                const int c[3] = {x, y, z};
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], c[a]);
                    hi[a] = std::max(hi[a], c[a]);
                }
            }
        }
    }
    if (hi[0] < 0) return 0;
    int ext[3];
    for (int a = 0; a < 3; ++a) ext[a] = hi[a] - lo[a] + 1;
    const double ratio = static_cast<double>(std::min({ext[0], ext[1], ext[2]})) / std::max({ext[0], ext[1], ext[2]});
    return std::clamp(static_cast<int>(std::lround(10.0 * ratio)), 0, 10);
}

}  // namespace neurocad::shapes
