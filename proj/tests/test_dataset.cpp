#include <doctest.h>

#include <algorithm>
#include <thread>

#include "neurocad/dataset.hpp"
#include "neurocad/shapes.hpp"
#include "temp_dir.hpp"

using namespace neurocad;

namespace {

std::vector<std::uint8_t> stl_of(const TriangleMesh& m) { return write_stl(m); }

std::vector<std::uint8_t> cube_stl(double size = 1.0) { return stl_of(shapes::box({0, 0, 0}, {size, size, size})); }

}  // namespace

TEST_CASE("manifest serialization round trip") {
    DatasetManifest m;
    m.models.push_back({"0123456789abcdef", std::string(64, 'a'), "bracket", "stl_binary", 32, "voxels/0123456789abcdef.binvox"});
    m.models.push_back({"fedcba9876543210", std::string(64, 'b'), "", "obj", 64, "voxels/fedcba9876543210.binvox"});
    m.annotations.push_back({1, "0123456789abcdef", "separability", 7, "alice", "2024-01-01T00:00:00Z"});
    m.annotations.push_back({2, "fedcba9876543210", "separability", 0, "bob", "2024-01-02T00:00:00Z"});
    m.splits["fedcba9876543210"] = Split::eval;
    m.plan = AugmentationPlan{{0, 5}, {1.0, 0.8}};
    const std::string text = serialize_manifest(m);
    CHECK(parse_manifest(text) == m);
    CHECK(serialize_manifest(parse_manifest(text)) == text);
    CHECK(std::count(text.begin(), text.end(), '\n') == 7);
}

TEST_CASE("manifest parse errors carry a line") {
    const std::string good = serialize_manifest(DatasetManifest{});
    try {
        parse_manifest(good + "{not json\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.unit() == ParseError::Unit::line);
        CHECK(e.position() == 3);
    }
    CHECK_THROWS_AS(parse_manifest(R"({"record":"manifest","format_version":99})"), Error);
    CHECK_THROWS_AS(parse_manifest(good + R"({"record":"annotation","id":1,"model_id":"nope","question_id":"q","score":1,"annotator":"a","timestamp":"t"})" "\n"),
                    Error);
}

TEST_CASE("labels per model") {
    DatasetManifest m;
    m.models.push_back({"aaaaaaaaaaaaaaaa", "", "", "stl_binary", 16, ""});
    auto add = [&](std::uint64_t id, const std::string& who, int score, const std::string& q = "q") {
        m.annotations.push_back({id, "aaaaaaaaaaaaaaaa", q, score, who, ""});
    };
    add(1, "alice", 2);
    add(2, "bob", 9);
    add(3, "carol", 6);
    add(4, "alice", 4);  // supersedes alice's 2
    add(5, "dave", 1, "other");
    CHECK(m.labels("q", Aggregation::most_recent).at("aaaaaaaaaaaaaaaa") == 4);
    CHECK(m.labels("q", Aggregation::median).at("aaaaaaaaaaaaaaaa") == 6);  // {4, 6, 9}
    add(6, "erin", 5);
    CHECK(m.labels("q", Aggregation::median).at("aaaaaaaaaaaaaaaa") == 5);  // lower median of {4, 5, 6, 9}
    CHECK(m.labels("other").at("aaaaaaaaaaaaaaaa") == 1);
    CHECK(m.labels("missing").empty());
    CHECK(aggregation_from_string("median") == Aggregation::median);
    CHECK_THROWS_AS(aggregation_from_string("mean"), Error);
}

TEST_CASE("ingest is content addressed and idempotent") {
    TempDir dir;
    Dataset ds(dir.path());
    const auto bytes = cube_stl();
    const std::string id = ds.ingest_model(bytes, SourceFormat::stl_binary, 16, "cube");
    CHECK(id.size() == 16);
    CHECK(id == sha256_hex(bytes).substr(0, 16));
    const std::string manifest_before = serialize_manifest(*ds.snapshot());
    CHECK(ds.ingest_model(bytes, SourceFormat::stl_binary, 16, "again") == id);
    CHECK(serialize_manifest(*ds.snapshot()) == manifest_before);
    CHECK(ds.snapshot()->models.size() == 1);

    const VoxelGrid stored = ds.load_grid(id);
    CHECK(stored == voxelize(parse_stl(bytes), 16));
    CHECK(std::filesystem::exists(dir.path() / ds.snapshot()->models[0].binvox_path));
}

TEST_CASE("sha256 known answer") {
    const std::string abc = "abc";
    CHECK(sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size())) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("a corrupt upload leaves the manifest untouched") {
    TempDir dir;
    Dataset ds(dir.path());
    ds.ingest_model(cube_stl(), SourceFormat::stl_binary, 16);
    const std::string before = serialize_manifest(*ds.snapshot());
    auto broken = cube_stl(2.0);
    broken.resize(300);
    CHECK_THROWS_AS(ds.ingest_model(broken, SourceFormat::stl_binary, 16), ParseError);
    CHECK(serialize_manifest(*ds.snapshot()) == before);
    CHECK(serialize_manifest(*Dataset(dir.path()).snapshot()) == before);
    CHECK_THROWS_AS(ds.ingest_model(cube_stl(3.0), SourceFormat::stl_binary, 2), Error);
}

TEST_CASE("annotations") {
    TempDir dir;
    Dataset ds(dir.path());
    const std::string id = ds.ingest_model(cube_stl(), SourceFormat::stl_binary, 16);
    const Annotation a = ds.record_annotation(id, "separability", 7, "alice", "2024-05-01T10:00:00Z");
    CHECK(a.id == 1);
    CHECK(a.timestamp == "2024-05-01T10:00:00Z");
    const Annotation b = ds.record_annotation(id, "separability", 3, "bob");
    CHECK(b.id == 2);
    CHECK(b.timestamp.size() == 20);
    CHECK_THROWS_AS(ds.record_annotation(id, "separability", 11, "alice"), Error);
    CHECK_THROWS_AS(ds.record_annotation(id, "separability", -1, "alice"), Error);
    CHECK_THROWS_AS(ds.record_annotation("0000000000000000", "separability", 5, "alice"), Error);
    CHECK(ds.snapshot()->annotations_for(id).size() == 2);
}

TEST_CASE("state survives reopening") {
    TempDir dir;
    std::string id;
    {
        Dataset ds(dir.path());
        id = ds.ingest_model(cube_stl(), SourceFormat::stl_binary, 16, "cube");
        ds.record_annotation(id, "q", 4, "alice", "2024-01-01T00:00:00Z");
        ds.set_plan(AugmentationPlan::identity());
    }
    Dataset again(dir.path());
    const auto snap = again.snapshot();
    REQUIRE(snap->models.size() == 1);
    CHECK(snap->models[0].name == "cube");
    CHECK(snap->annotations.size() == 1);
    CHECK(snap->plan == AugmentationPlan::identity());
    CHECK(again.record_annotation(id, "q", 5, "bob").id == 2);
}

TEST_CASE("splits are seeded and disjoint") {
    TempDir dir;
    Dataset ds(dir.path());
    for (int i = 0; i < 10; ++i) ds.ingest_model(cube_stl(0.5 + 0.1 * i), SourceFormat::stl_binary, 16);
    ds.assign_splits(3, 42);
    const auto first = ds.snapshot()->splits;
    std::size_t evals = 0;
    for (const auto& [id, s] : first) evals += s == Split::eval;
    CHECK(evals == 3);
    ds.assign_splits(3, 42);
    CHECK(ds.snapshot()->splits == first);
    ds.assign_splits(3, 43);
    CHECK_FALSE(ds.snapshot()->splits == first);
    CHECK_THROWS_AS(ds.assign_splits(10, 1), Error);
}

TEST_CASE("snapshots stay consistent under concurrent writers") {
    TempDir dir;
    Dataset ds(dir.path());
    const std::string id = ds.ingest_model(cube_stl(), SourceFormat::stl_binary, 16);
    std::vector<std::thread> writers;
    for (int t = 0; t < 4; ++t) {
        writers.emplace_back([&, t] {
            for (int i = 0; i < 10; ++i) ds.record_annotation(id, "q", (t + i) % 11, "w" + std::to_string(t));
        });
    }
    for (auto& w : writers) w.join();
    const auto snap = ds.snapshot();
    CHECK(snap->annotations.size() == 40);
    std::vector<std::uint64_t> ids;
    for (const auto& a : snap->annotations) ids.push_back(a.id);
    std::sort(ids.begin(), ids.end());
    CHECK(std::adjacent_find(ids.begin(), ids.end()) == ids.end());
    CHECK(Dataset(dir.path()).snapshot()->annotations.size() == 40);
}
