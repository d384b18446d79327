#include "neurocad/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace neurocad {

namespace {

int determinant(const Matrix3i& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

std::vector<Matrix3i> build_rotations() {
    std::vector<Matrix3i> out;
    std::array<int, 3> perm{0, 1, 2};
    do {
        for (int signs = 0; signs < 8; ++signs) {
            Matrix3i m{};
            for (int row = 0; row < 3; ++row) m[row][perm[row]] = (signs >> row) & 1 ? -1 : 1;
            if (determinant(m) == 1) out.push_back(m);
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

const std::vector<Matrix3i>& rotations() {
    static const std::vector<Matrix3i> table = build_rotations();
    return table;
}

}  // namespace

Orientation::Orientation(int index) : index_(index) {
    if (index < 0 || index >= kCount) throw Error("orientation index " + std::to_string(index) + " outside [0, 23]");
}

const Matrix3i& Orientation::matrix() const { return rotations()[static_cast<std::size_t>(index_)]; }

Orientation Orientation::inverse() const {
    const Matrix3i& m = matrix();
    Matrix3i t{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) t[r][c] = m[c][r];
    }
    return Orientation(find(t));
}

Orientation Orientation::compose(const Orientation& rhs) const {
    const Matrix3i& a = matrix();
    const Matrix3i& b = rhs.matrix();
    Matrix3i p{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            for (int k = 0; k < 3; ++k) p[r][c] += a[r][k] * b[k][c];
        }
    }
    return Orientation(find(p));
}

std::vector<Orientation> Orientation::all() {
    std::vector<Orientation> out;
    for (int i = 0; i < kCount; ++i) out.emplace_back(i);
    return out;
}

int Orientation::find(const Matrix3i& m) {
    const auto& table = rotations();
    const auto it = std::find(table.begin(), table.end(), m);
    return it == table.end() ? -1 : static_cast<int>(it - table.begin());
}

AugmentationPlan AugmentationPlan::default_plan() {
    AugmentationPlan plan;
    for (int i = 0; i < Orientation::kCount; ++i) plan.orientations.push_back(i);
    plan.scale_factors = {1.0, 0.9, 0.8, 0.7, 0.6};
    return plan;
}

AugmentationPlan AugmentationPlan::identity() { return {{0}, {1.0}}; }

void AugmentationPlan::validate() const {
    if (orientations.empty()) throw Error("augmentation plan has no orientations");
    if (scale_factors.empty()) throw Error("augmentation plan has no scale factors");
    for (int o : orientations) {
        if (o < 0 || o >= Orientation::kCount) throw Error("augmentation plan orientation " + std::to_string(o) + " outside [0, 23]");
    }
    for (double f : scale_factors) {
        if (!(f > 0.0 && f <= 1.0)) throw Error("augmentation plan scale factor " + std::to_string(f) + " outside (0, 1]");
    }
}

nlohmann::json to_json(const AugmentationPlan& plan) {
    return {{"orientations", plan.orientations}, {"scale_factors", plan.scale_factors}};
}

AugmentationPlan plan_from_json(const nlohmann::json& j) {
    AugmentationPlan plan;
    try {
        plan.orientations = j.at("orientations").get<std::vector<int>>();
        plan.scale_factors = j.at("scale_factors").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed augmentation plan: ") + e.what());
    }
    plan.validate();
    return plan;
}

VoxelGrid rotate_grid(const VoxelGrid& grid, const Orientation& o) {
    const GridDims d = grid.dims();
    if (!d.cubic()) throw Error("rotate_grid requires a cubic grid");
    if (o.index() == 0) return grid;

    const int n = d.x;
    const Matrix3i& m = o.matrix();
    VoxelGrid out(d, grid.translate, grid.scale);
    // Doubled, centered coordinates keep the mapping in integers: c = 2i - (n - 1).
    for (int z = 0; z < n; ++z) {
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                if (!grid.at(x, y, z)) continue;
                const int c[3] = {2 * x - (n - 1), 2 * y - (n - 1), 2 * z - (n - 1)};
                int r[3];
                for (int row = 0; row < 3; ++row) {
                    r[row] = (m[row][0] * c[0] + m[row][1] * c[1] + m[row][2] * c[2] + (n - 1)) / 2;
                }
                out.set(r[0], r[1], r[2]);
            }
        }
    }
    return out;
}

VoxelGrid scale_grid(const VoxelGrid& grid, double factor) {
    if (!(factor > 0.0 && factor <= 1.0)) throw Error("scale factor " + std::to_string(factor) + " outside (0, 1]");
    if (factor == 1.0) return grid;

    const GridDims d = grid.dims();
    VoxelGrid out(d, grid.translate, grid.scale);
    const int dim[3] = {d.x, d.y, d.z};
    auto map = [&](int i, int axis) {
        const double center = 0.5 * dim[axis];
        const int j = static_cast<int>(std::floor(center + (i + 0.5 - center) * factor));
        return std::clamp(j, 0, dim[axis] - 1);
    };
    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                if (grid.at(x, y, z)) out.set(map(x, 0), map(y, 1), map(z, 2));
            }
        }
    }
    return out;
}

VoxelGrid make_invariant(const VoxelGrid& grid, const AugmentationPlan& plan, std::size_t k) {
    const std::size_t n_scales = plan.scale_factors.size();
    const Orientation o(plan.orientations.at(k / n_scales));
    return scale_grid(rotate_grid(grid, o), plan.scale_factors.at(k % n_scales));
}

std::vector<VoxelGrid> generate_invariants(const VoxelGrid& grid, const AugmentationPlan& plan) {
    plan.validate();
    if (!grid.dims().cubic()) throw Error("generate_invariants requires a cubic grid");
    std::vector<VoxelGrid> out;
    out.reserve(plan.size());
    for (int oi : plan.orientations) {
        const VoxelGrid rotated = rotate_grid(grid, Orientation(oi));
        for (double f : plan.scale_factors) out.push_back(scale_grid(rotated, f));
    }
    return out;
}

}  // namespace neurocad
