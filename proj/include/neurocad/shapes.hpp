#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neurocad/mesh.hpp"
#include "neurocad/voxel.hpp"

namespace neurocad::shapes {

// Closed, outward-wound triangle meshes. Composite shapes are unions of
// overlapping closed parts; solid voxelization fills them correctly.

TriangleMesh box(Vec3 min, Vec3 max);
TriangleMesh cylinder(double radius, double height, int segments = 32);  // axis z, centered
TriangleMesh sphere(double radius, int stacks = 24, int slices = 48);    // centered
/// Octagonal prism: an x-y rectangle with its corners cut by `chamfer`, extruded along z.
TriangleMesh chamfered_box(double sx, double sy, double sz, double chamfer);
TriangleMesh l_bracket(double length, double height, double width, double thickness);
/// Open-top box with wall thickness `wall`.
TriangleMesh cup(double sx, double sy, double sz, double wall);

TriangleMesh merge(const std::vector<TriangleMesh>& parts);

enum class Kind { box, cylinder, sphere, chamfered_box, l_bracket, cup };
inline constexpr int kKindCount = 6;

std::string_view to_string(Kind kind);

struct ProceduralShape {
    Kind kind = Kind::box;
    std::string name;
    TriangleMesh mesh;
};

/// Deterministic random shape; `index` selects the kind round-robin so a
/// corpus of n shapes covers every kind.
ProceduralShape random_shape(std::uint64_t seed, std::size_t index);

/// Ratio of the smallest to the largest occupied extent, mapped onto 0..10.
/// Invariant under the 24 cube rotations.
int slenderness_score(const VoxelGrid& grid);

}  // namespace neurocad::shapes
