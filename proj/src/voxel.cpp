#include "neurocad/voxel.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <string>
#include <string_view>

namespace neurocad {

VoxelGrid::VoxelGrid(GridDims dims, Vec3 translate_, double scale_)
    : translate(translate_), scale(scale_), dims_(dims) {
    if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0) throw Error("voxel grid dimensions must be positive");
    if (dims.x > kMaxGridDim || dims.y > kMaxGridDim || dims.z > kMaxGridDim) {
        throw Error("voxel grid dimension exceeds " + std::to_string(kMaxGridDim));
    }
    if (!(scale_ > 0.0)) throw Error("voxel grid scale must be positive");
    cells_.assign(dims.count(), 0);
}

std::size_t VoxelGrid::occupied_count() const {
    return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Triangle / box overlap

namespace {

bool axis_separates(Vec3 axis, const std::array<Vec3, 3>& v, Vec3 half) {
    const double p0 = dot(axis, v[0]);
    const double p1 = dot(axis, v[1]);
    const double p2 = dot(axis, v[2]);
    const double lo = std::min({p0, p1, p2});
    const double hi = std::max({p0, p1, p2});
    const double radius = half.x * std::abs(axis.x) + half.y * std::abs(axis.y) + half.z * std::abs(axis.z);
    return lo > radius || hi < -radius;
}

}  // namespace

bool triangle_box_overlap(Vec3 box_center, Vec3 box_half, const std::array<Vec3, 3>& triangle) {
    const std::array<Vec3, 3> v{triangle[0] - box_center, triangle[1] - box_center, triangle[2] - box_center};

    // Box face normals.
    for (int a = 0; a < 3; ++a) {
        const double lo = std::min({v[0][a], v[1][a], v[2][a]});
        const double hi = std::max({v[0][a], v[1][a], v[2][a]});
        if (lo > box_half[a] || hi < -box_half[a]) return false;
    }

    const std::array<Vec3, 3> edges{v[1] - v[0], v[2] - v[1], v[0] - v[2]};

    // Triangle plane.
    const Vec3 normal = cross(edges[0], edges[1]);
    if (axis_separates(normal, v, box_half)) return false;

    // Edge x box-axis cross products.
    static constexpr std::array<Vec3, 3> kAxes{Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
    for (const Vec3& e : edges) {
        for (const Vec3& u : kAxes) {
            const Vec3 axis = cross(e, u);
            if (axis == Vec3{}) continue;
            if (axis_separates(axis, v, box_half)) return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Voxelization

namespace {

struct Normalization {
    Vec3 center;
    double grid_per_unit = 1.0;
    double half_res = 0.0;

    Vec3 to_grid(Vec3 p) const {
        return {(p.x - center.x) * grid_per_unit + half_res, (p.y - center.y) * grid_per_unit + half_res,
                (p.z - center.z) * grid_per_unit + half_res};
    }
};

Normalization normalization_for(const TriangleMesh& mesh, int resolution) {
    if (mesh.triangles.empty()) throw Error("cannot voxelize an empty mesh");
    if (resolution < kMinVoxelResolution || resolution > kMaxGridDim) {
        throw Error("voxel resolution " + std::to_string(resolution) + " outside [" +
                    std::to_string(kMinVoxelResolution) + ", " + std::to_string(kMaxGridDim) + "]");
    }
    TriangleMesh usable;
    for (const auto& t : mesh.triangles) {
        if (!t.degenerate) usable.triangles.push_back(t);
    }
    if (usable.triangles.empty()) throw Error("cannot voxelize a mesh whose triangles are all degenerate");

    const BoundingBox box = bounding_box(usable);
    const Vec3 ext = box.extent();
    const double longest = std::max({ext.x, ext.y, ext.z});
    Normalization n;
    n.center = (box.min + box.max) * 0.5;
    n.grid_per_unit = static_cast<double>(resolution - 2) / longest;
    n.half_res = 0.5 * resolution;
    return n;
}

}  // namespace

VoxelGrid rasterize_surface(const TriangleMesh& mesh, int resolution) {
    const Normalization norm = normalization_for(mesh, resolution);
    const double grid_len = resolution / norm.grid_per_unit;
    const Vec3 translate = norm.center - Vec3{1, 1, 1} * (norm.half_res / norm.grid_per_unit);
    VoxelGrid grid(GridDims{resolution, resolution, resolution}, translate, grid_len);
    std::span<std::uint8_t> cells = grid.cells();

    const auto& tris = mesh.triangles;
    const long long count = static_cast<long long>(tris.size());
    const Vec3 half{0.5, 0.5, 0.5};

#pragma omp parallel for schedule(dynamic, 64)
    for (long long ti = 0; ti < count; ++ti) {
        const Triangle& t = tris[static_cast<std::size_t>(ti)];
        if (t.degenerate) continue;
        const std::array<Vec3, 3> g{norm.to_grid(t.v0), norm.to_grid(t.v1), norm.to_grid(t.v2)};
        int lo[3];
        int hi[3];
        for (int a = 0; a < 3; ++a) {
            const double mn = std::min({g[0][a], g[1][a], g[2][a]});
            const double mx = std::max({g[0][a], g[1][a], g[2][a]});
            // Closed cells: a coordinate on an integer plane touches both neighbours.
            lo[a] = std::max(0, static_cast<int>(std::ceil(mn)) - 1);
            hi[a] = std::min(resolution - 1, static_cast<int>(std::floor(mx)));
        }
        for (int z = lo[2]; z <= hi[2]; ++z) {
            for (int y = lo[1]; y <= hi[1]; ++y) {
                for (int x = lo[0]; x <= hi[0]; ++x) {
                    const std::size_t idx = grid.index(x, y, z);
                    if (std::atomic_ref<std::uint8_t>(cells[idx]).load(std::memory_order_relaxed)) continue;
                    if (triangle_box_overlap({x + 0.5, y + 0.5, z + 0.5}, half, g)) {
                        std::atomic_ref<std::uint8_t>(cells[idx]).store(1, std::memory_order_relaxed);
                    }
                }
            }
        }
    }
    return grid;
}

VoxelGrid fill_interior(const VoxelGrid& surface) {
    const GridDims d = surface.dims();
    std::vector<std::uint8_t> exterior(surface.size(), 0);
    std::vector<std::size_t> stack;

    auto seed = [&](int x, int y, int z) {
        const std::size_t idx = surface.index(x, y, z);
        if (!surface.cells()[idx] && !exterior[idx]) {
            exterior[idx] = 1;
            stack.push_back(idx);
        }
    };
    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                if (x == 0 || y == 0 || z == 0 || x == d.x - 1 || y == d.y - 1 || z == d.z - 1) seed(x, y, z);
            }
        }
    }

    const std::size_t sx = 1;
    const std::size_t sy = static_cast<std::size_t>(d.x);
    const std::size_t sz = static_cast<std::size_t>(d.x) * d.y;
    while (!stack.empty()) {
        const std::size_t idx = stack.back();
        stack.pop_back();
        const int x = static_cast<int>(idx % sy);
        const int y = static_cast<int>((idx / sy) % d.y);
        const int z = static_cast<int>(idx / sz);
        auto visit = [&](std::size_t n) {
            if (!surface.cells()[n] && !exterior[n]) {
                exterior[n] = 1;
                stack.push_back(n);
            }
        };
        if (x > 0) visit(idx - sx);
        if (x + 1 < d.x) visit(idx + sx);
        if (y > 0) visit(idx - sy);
        if (y + 1 < d.y) visit(idx + sy);
        if (z > 0) visit(idx - sz);
        if (z + 1 < d.z) visit(idx + sz);
    }

    VoxelGrid solid = surface;
    auto out = solid.cells();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = exterior[i] ? 0 : 1;
    return solid;
}

VoxelGrid voxelize(const TriangleMesh& mesh, int resolution) {
    VoxelGrid solid = fill_interior(rasterize_surface(mesh, resolution));
    if (solid.occupied_count() == 0) throw Error("voxelization produced no occupied cells");
    return solid;
}

FloatTensor3 to_float_tensor(const VoxelGrid& grid) {
    FloatTensor3 t{grid.dims(), {}};
    t.values.reserve(grid.size());
    for (std::uint8_t c : grid.cells()) t.values.push_back(c ? 1.0 : 0.0);
    return t;
}

// ---------------------------------------------------------------------------
// binvox

namespace {

std::string format_double(double v) {
    char buf[40];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
}

// binvox stores y fastest, then z, x slowest.
template <typename Fn>
void for_each_binvox_order(const GridDims& d, Fn&& fn) {
    for (int x = 0; x < d.x; ++x) {
        for (int z = 0; z < d.z; ++z) {
            for (int y = 0; y < d.y; ++y) fn(x, y, z);
        }
    }
}

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    // Returns the next newline-terminated line without the terminator.
    std::string_view line() {
        if (pos_ >= bytes_.size()) fail("unexpected end of header");
        const std::size_t start = pos_;
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
        if (pos_ >= bytes_.size()) fail("header line not terminated");
        std::string_view s(reinterpret_cast<const char*>(bytes_.data()) + start, pos_ - start);
        ++pos_;
        ++line_;
        if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
        return s;
    }

    std::size_t offset() const { return pos_; }
    std::size_t line_number() const { return line_; }

    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError("binvox header line " + std::to_string(line_ + 1) + ": " + message, pos_,
                         ParseError::Unit::byte);
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return ec == std::errc{} && ptr == tok.data() + tok.size();
}

}  // namespace

std::vector<std::uint8_t> write_binvox(const VoxelGrid& grid) {
    const GridDims d = grid.dims();
    std::string header = "#binvox 1\n";
    header += "dim " + std::to_string(d.x) + " " + std::to_string(d.y) + " " + std::to_string(d.z) + "\n";
    header += "translate " + format_double(grid.translate.x) + " " + format_double(grid.translate.y) + " " +
              format_double(grid.translate.z) + "\n";
    header += "scale " + format_double(grid.scale) + "\n";
    header += "data\n";

    std::vector<std::uint8_t> out(header.begin(), header.end());
    std::uint8_t value = 0;
    int run = 0;
    bool first = true;
    for_each_binvox_order(d, [&](int x, int y, int z) {
        const std::uint8_t v = grid.at(x, y, z) ? 1 : 0;
        if (first) {
            value = v;
            run = 1;
            first = false;
        } else if (v == value && run < 255) {
            ++run;
        } else {
            out.push_back(value);
            out.push_back(static_cast<std::uint8_t>(run));
            value = v;
            run = 1;
        }
    });
    out.push_back(value);
    out.push_back(static_cast<std::uint8_t>(run));
    return out;
}

VoxelGrid read_binvox(std::span<const std::uint8_t> bytes) {
    HeaderReader reader(bytes);
    const std::string_view magic = reader.line();
    const auto magic_tokens = split_ws(magic);
    if (magic_tokens.size() != 2 || magic_tokens[0] != "#binvox") reader.fail("missing '#binvox' signature");
    if (magic_tokens[1] != "1") reader.fail("unknown version '" + std::string(magic_tokens[1]) + "'");

    GridDims dims;
    Vec3 translate;
    double scale = 1.0;
    bool have_dim = false;
    for (;;) {
        const auto tokens = split_ws(reader.line());
        if (tokens.empty()) continue;
        if (tokens[0] == "data") break;
        if (tokens[0] == "dim") {
            if (tokens.size() != 4 || !parse_number(tokens[1], dims.x) || !parse_number(tokens[2], dims.y) ||
                !parse_number(tokens[3], dims.z)) {
                reader.fail("malformed 'dim' line");
            }
            if (dims.x <= 0 || dims.y <= 0 || dims.z <= 0 || dims.x > kMaxGridDim || dims.y > kMaxGridDim ||
                dims.z > kMaxGridDim) {
                reader.fail("dimensions outside [1, " + std::to_string(kMaxGridDim) + "]");
            }
            have_dim = true;
        } else if (tokens[0] == "translate") {
            if (tokens.size() != 4 || !parse_number(tokens[1], translate.x) || !parse_number(tokens[2], translate.y) ||
                !parse_number(tokens[3], translate.z) || !translate.finite()) {
                reader.fail("malformed 'translate' line");
            }
        } else if (tokens[0] == "scale") {
            if (tokens.size() != 2 || !parse_number(tokens[1], scale) || !(scale > 0.0) || !std::isfinite(scale)) {
                reader.fail("malformed 'scale' line");
            }
        } else {
            reader.fail("unknown header keyword '" + std::string(tokens[0]) + "'");
        }
    }
    if (!have_dim) reader.fail("missing 'dim' line before 'data'");

    VoxelGrid grid(dims, translate, scale);
    const std::size_t total = dims.count();
    std::size_t pos = reader.offset();
    std::size_t filled = 0;
    std::vector<std::uint8_t> linear;  // binvox order
    linear.reserve(total);
    while (pos < bytes.size()) {
        if (pos + 1 >= bytes.size()) {
            throw ParseError("binvox dim/data length mismatch: dangling byte at " + std::to_string(pos), pos,
                             ParseError::Unit::byte);
        }
        const std::uint8_t value = bytes[pos];
        const std::uint8_t count = bytes[pos + 1];
        if (value > 1) {
            throw ParseError("binvox invalid run value " + std::to_string(value) + " at byte " + std::to_string(pos),
                             pos, ParseError::Unit::byte);
        }
        if (count == 0) {
            throw ParseError("binvox zero-length run at byte " + std::to_string(pos + 1), pos + 1,
                             ParseError::Unit::byte);
        }
        if (filled + count > total) {
            throw ParseError("binvox run overflow at byte " + std::to_string(pos) + ": runs exceed " +
                                 std::to_string(total) + " cells",
                             pos, ParseError::Unit::byte);
        }
        linear.insert(linear.end(), count, value);
        filled += count;
        pos += 2;
    }
    if (filled != total) {
        throw ParseError("binvox dim/data length mismatch: runs cover " + std::to_string(filled) + " of " +
                             std::to_string(total) + " cells",
                         pos, ParseError::Unit::byte);
    }

    std::size_t i = 0;
    for_each_binvox_order(dims, [&](int x, int y, int z) { grid.set(x, y, z, linear[i++] != 0); });
    return grid;
}

VoxelGrid downsample_any(const VoxelGrid& grid, int lod) {
    if (lod <= 0) throw Error("level of detail must be positive");
    const GridDims d = grid.dims();
    const int longest = std::max({d.x, d.y, d.z});
    const int factor = (longest + lod - 1) / lod;
    if (factor <= 1) return grid;
    const GridDims out_dims{(d.x + factor - 1) / factor, (d.y + factor - 1) / factor, (d.z + factor - 1) / factor};
    // Pooled cells are `factor` times larger; the last one may overhang the grid.
    VoxelGrid out(out_dims, grid.translate, grid.scale * out_dims.x * factor / d.x);
    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                if (grid.at(x, y, z)) out.set(x / factor, y / factor, z / factor);
            }
        }
    }
    return out;
}

std::vector<std::array<int, 3>> occupied_coordinates(const VoxelGrid& grid) {
    std::vector<std::array<int, 3>> out;
    const GridDims d = grid.dims();
    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                if (grid.at(x, y, z)) out.push_back({x, y, z});
            }
        }
    }
    return out;
}

}  // namespace neurocad
