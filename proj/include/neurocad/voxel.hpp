#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "neurocad/mesh.hpp"

namespace neurocad {

inline constexpr int kMaxGridDim = 1024;
inline constexpr int kMinVoxelResolution = 4;

struct GridDims {
    int x = 0;
    int y = 0;
    int z = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
    }
    bool cubic() const { return x == y && y == z; }
    friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// Dense boolean occupancy grid, x-fastest storage. `translate` and `scale`
/// map grid space back to model space: model = translate + (g / dim) * scale,
/// where g is a continuous grid coordinate (cell i spans [i, i+1]).
class VoxelGrid {
public:
    VoxelGrid() = default;
    explicit VoxelGrid(GridDims dims, Vec3 translate = {}, double scale = 1.0);

    const GridDims& dims() const { return dims_; }
    std::size_t size() const { return cells_.size(); }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims_.y + static_cast<std::size_t>(y)) * dims_.x + static_cast<std::size_t>(x);
    }
    bool at(int x, int y, int z) const { return cells_[index(x, y, z)] != 0; }
    void set(int x, int y, int z, bool occupied = true) { cells_[index(x, y, z)] = occupied ? 1 : 0; }
    bool contains(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < dims_.x && y < dims_.y && z < dims_.z;
    }

    std::span<const std::uint8_t> cells() const { return cells_; }
    std::span<std::uint8_t> cells() { return cells_; }

    std::size_t occupied_count() const;

    Vec3 translate;
    double scale = 1.0;

    friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

private:
    GridDims dims_;
    std::vector<std::uint8_t> cells_;  // 0 or 1
};

/// Occupancy as reals (1.0 / 0.0), same shape and ordering as the grid.
struct FloatTensor3 {
    GridDims dims;
    std::vector<double> values;
};

/// Solid voxelization: the mesh is centered and uniformly scaled so its longest
/// bounding-box side spans resolution - 2 cells, surface cells are found by
/// triangle/cell overlap and the interior is filled by exterior flood fill.
VoxelGrid voxelize(const TriangleMesh& mesh, int resolution);

/// Marks every cell whose closed cube touches a non-degenerate triangle.
/// Exposed separately so tests can distinguish surface from interior cells.
VoxelGrid rasterize_surface(const TriangleMesh& mesh, int resolution);

/// Flood fills the exterior from all boundary cells (6-connectivity); every
/// cell not reached becomes occupied. Open meshes leak and stay hollow.
VoxelGrid fill_interior(const VoxelGrid& surface);

FloatTensor3 to_float_tensor(const VoxelGrid& grid);

std::vector<std::uint8_t> write_binvox(const VoxelGrid& grid);
VoxelGrid read_binvox(std::span<const std::uint8_t> bytes);

/// Any-occupied pooling down to at most `lod` cells along the longest axis.
VoxelGrid downsample_any(const VoxelGrid& grid, int lod);

std::vector<std::array<int, 3>> occupied_coordinates(const VoxelGrid& grid);

/// Triangle / axis-aligned box overlap by the separating axis theorem
/// (3 box normals, triangle normal, 9 edge cross products). Touching counts
/// as overlap.
bool triangle_box_overlap(Vec3 box_center, Vec3 box_half, const std::array<Vec3, 3>& triangle);

}  // namespace neurocad
