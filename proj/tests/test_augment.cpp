#include <doctest.h>

#include <algorithm>
#include <set>

#include "neurocad/augment.hpp"
#include "neurocad/shapes.hpp"
#include "oracles/rotation_oracle.hpp"

using namespace neurocad;

namespace {

oracle::M3 as_oracle(const Matrix3i& m) {
    oracle::M3 out{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out[i][j] = m[i][j];
    return out;
}

// Three cells in an L: no rotation other than the identity maps it onto itself.
VoxelGrid tromino() {
    VoxelGrid g({4, 4, 4});
    g.set(0, 0, 0);
    g.set(1, 0, 0);
    g.set(0, 2, 0);
    g.set(0, 0, 3);
    return g;
}

std::array<int, 3> extent(const VoxelGrid& g) {
    std::array<int, 3> lo{1 << 20, 1 << 20, 1 << 20}, hi{-1, -1, -1};
    for (const auto& c : occupied_coordinates(g))
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], c[a]);
            hi[a] = std::max(hi[a], c[a]);
        }
    return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
}

}  // namespace

TEST_CASE("the 24 orientations are exactly the rotation group") {
    const auto reference = oracle::cube_rotation_group();
    REQUIRE(reference.size() == 24);
    std::set<oracle::M3> ours;
    for (const auto& o : Orientation::all()) {
        CHECK(oracle::det(as_oracle(o.matrix())) == 1);
        ours.insert(as_oracle(o.matrix()));
    }
    CHECK(ours == reference);
    CHECK(Orientation(0).matrix() == Matrix3i{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}});
}

TEST_CASE("closure, inverses and composition order") {
    for (const auto& a : Orientation::all()) {
        CHECK(a.compose(a.inverse()) == Orientation(0));
        CHECK(a.inverse().compose(a) == Orientation(0));
        for (const auto& b : Orientation::all()) {
            const Orientation c = a.compose(b);
            CHECK(as_oracle(c.matrix()) == oracle::mul(as_oracle(a.matrix()), as_oracle(b.matrix())));
        }
    }
    CHECK(Orientation::find(Matrix3i{{{-1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}) == -1);
    CHECK_THROWS_AS(Orientation(24), Error);
}

TEST_CASE("rotating a grid") {
    const VoxelGrid g = tromino();
    CHECK(rotate_grid(g, Orientation(0)) == g);

    std::set<std::vector<std::uint8_t>> images;
    for (const auto& o : Orientation::all()) {
        const VoxelGrid r = rotate_grid(g, o);
        CHECK(r.occupied_count() == g.occupied_count());
        CHECK(rotate_grid(r, o.inverse()) == g);
        CHECK(rotate_grid(rotate_grid(g, o), o) == rotate_grid(g, o.compose(o)));
        images.insert({r.cells().begin(), r.cells().end()});
    }
    CHECK(images.size() == 24);

    const VoxelGrid cube = voxelize(shapes::box({0, 0, 0}, {1, 1, 1}), 8);
    for (const auto& o : Orientation::all()) CHECK(std::ranges::equal(rotate_grid(cube, o).cells(), cube.cells()));

    CHECK_THROWS_AS(rotate_grid(VoxelGrid({2, 3, 4}), Orientation(5)), Error);
}

TEST_CASE("quarter turn about z moves +x to +y") {
    VoxelGrid g({3, 3, 3});
    g.set(2, 1, 1);
    const Orientation quarter(Orientation::find(Matrix3i{{{0, -1, 0}, {1, 0, 0}, {0, 0, 1}}}));
    const VoxelGrid r = rotate_grid(g, quarter);
    CHECK(r.at(1, 2, 1));
    CHECK(r.occupied_count() == 1);
}

TEST_CASE("scaling") {
    const VoxelGrid g = voxelize(shapes::random_shape(1, 2).mesh, 16);
    CHECK(scale_grid(g, 1.0) == g);

    VoxelGrid full({32, 32, 32});
    for (auto& c : full.cells()) c = 1;
    const auto e = extent(scale_grid(full, 0.5));
    for (int a : e) CHECK(std::abs(a - 16) <= 1);

    VoxelGrid center({5, 5, 5});
    center.set(2, 2, 2);
    for (double f : {0.9, 0.6, 0.3}) {
        const VoxelGrid s = scale_grid(center, f);
        CHECK(s.occupied_count() == 1);
        CHECK(s.at(2, 2, 2));
    }

    const VoxelGrid shrunk = scale_grid(g, 0.6);
    CHECK(shrunk.dims() == g.dims());
    CHECK(shrunk.occupied_count() <= g.occupied_count());
    CHECK(shrunk.occupied_count() > 0);
    CHECK_THROWS_AS(scale_grid(g, 0.0), Error);
    CHECK_THROWS_AS(scale_grid(g, 1.5), Error);
}

TEST_CASE("default plan yields 120 invariants") {
    const AugmentationPlan plan = AugmentationPlan::default_plan();
    CHECK(plan.size() == 120);
    CHECK(plan.size() * 187 == 22440);
    const VoxelGrid g = voxelize(shapes::random_shape(2, 3).mesh, 8);
    const auto all = generate_invariants(g, plan);
    REQUIRE(all.size() == 120);
    CHECK(all[0] == g);
    for (std::size_t k : {0u, 1u, 57u, 119u}) CHECK(make_invariant(g, plan, k) == all[k]);
    CHECK(all[7] == scale_grid(rotate_grid(g, Orientation(1)), plan.scale_factors[2]));

    const auto one = generate_invariants(g, AugmentationPlan::identity());
    REQUIRE(one.size() == 1);
    CHECK(one[0] == g);
}

TEST_CASE("plan validation and JSON") {
    const AugmentationPlan plan{{0, 3, 23}, {1.0, 0.75}};
    CHECK(plan_from_json(to_json(plan)) == plan);
    CHECK_THROWS_AS((AugmentationPlan{{}, {1.0}}.validate()), Error);
    CHECK_THROWS_AS((AugmentationPlan{{0}, {}}.validate()), Error);
    CHECK_THROWS_AS((AugmentationPlan{{24}, {1.0}}.validate()), Error);
    CHECK_THROWS_AS((AugmentationPlan{{0}, {0.0}}.validate()), Error);
    CHECK_THROWS_AS((AugmentationPlan{{0}, {1.01}}.validate()), Error);
    CHECK_THROWS_AS(plan_from_json(nlohmann::json::parse(R"({"orientations": [0]})")), Error);
}
