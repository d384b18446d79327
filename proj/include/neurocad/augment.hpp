#pragma once

#include <array>
#include <vector>

#include <json.hpp>

#include "neurocad/voxel.hpp"

namespace neurocad {

using Matrix3i = std::array<std::array<int, 3>, 3>;

/// One of the 24 proper rotations of the cube. Index 0 is the identity.
class Orientation {
public:
    static constexpr int kCount = 24;

    explicit Orientation(int index = 0);

    int index() const { return index_; }
    const Matrix3i& matrix() const;

    Orientation inverse() const;
    /// Rotation applying `rhs` first, then `*this`.
    Orientation compose(const Orientation& rhs) const;

    static std::vector<Orientation> all();
    /// Index of a signed permutation matrix with determinant +1, or -1.
    static int find(const Matrix3i& m);

    friend bool operator==(const Orientation&, const Orientation&) = default;

private:
    int index_ = 0;
};

struct AugmentationPlan {
    std::vector<int> orientations;     // indices into the 24 rotations
    std::vector<double> scale_factors; // each in (0, 1]

    static AugmentationPlan default_plan();
    static AugmentationPlan identity();

    std::size_t size() const { return orientations.size() * scale_factors.size(); }
    /// Throws Error on empty lists, unknown orientations or factors outside (0, 1].
    void validate() const;

    friend bool operator==(const AugmentationPlan&, const AugmentationPlan&) = default;
};

nlohmann::json to_json(const AugmentationPlan& plan);
AugmentationPlan plan_from_json(const nlohmann::json& j);

VoxelGrid rotate_grid(const VoxelGrid& grid, const Orientation& o);

/// Proportion-preserving shrink about the grid center. Each source cell is
/// mapped to its nearest destination cell; factor 1 returns the grid unchanged.
VoxelGrid scale_grid(const VoxelGrid& grid, double factor);

/// scale(rotate(grid)) for every (orientation, scale) pair, orientation-major.
std::vector<VoxelGrid> generate_invariants(const VoxelGrid& grid, const AugmentationPlan& plan);

/// The single invariant at position `k` of generate_invariants' order.
VoxelGrid make_invariant(const VoxelGrid& grid, const AugmentationPlan& plan, std::size_t k);

}  // namespace neurocad
