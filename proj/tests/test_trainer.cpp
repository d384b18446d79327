#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "neurocad/shapes.hpp"
#include "neurocad/trainer.hpp"
#include "oracles/numeric_oracle.hpp"
#include "temp_dir.hpp"

using namespace neurocad;

namespace {

std::vector<TrainingSample> corpus(std::size_t n, std::uint64_t seed, int res = 16) {
    std::vector<TrainingSample> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto shape = shapes::random_shape(seed, i);
        VoxelGrid g = voxelize(shape.mesh, res);
        const int score = shapes::slenderness_score(g);
        out.push_back({shape.name, std::move(g), score});
    }
    return out;
}

TrainingConfig quick_config() {
    TrainingConfig c;
    c.epochs = 2;
    c.batch_size = 4;
    c.augmentation = false;
    c.seed = 3;
    return c;
}

std::vector<EvaluationRow> constant_rows(int predicted) {
    std::vector<EvaluationRow> rows;
    for (int e = 0; e <= 10; ++e) rows.push_back({"m" + std::to_string(e), e, predicted, 0.9, false});
    return rows;
}

}  // namespace

TEST_CASE("config validation and JSON") {
    TrainingConfig c;
    c.question_id = "separability";
    c.learning_rate = 5e-4;
    c.rotation_groups = 3;
    c.aggregation = Aggregation::median;
    const TrainingConfig back = training_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK_THROWS_AS(training_config_from_json(nlohmann::json::parse(R"({"epoch": 3})")), Error);
    TrainingConfig bad;
    bad.learning_rate = -1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = TrainingConfig{};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("learning rate zero leaves the weights alone") {
    const auto samples = corpus(6, 1);
    const NetworkArchitecture arch = build_single_part_net(16);
    TrainingConfig c = quick_config();
    c.learning_rate = 0.0;
    const TrainResult r = train_samples(arch, samples, AugmentationPlan::identity(), c);
    CHECK(r.params.layers == init_params(arch, c.seed).layers);
    CHECK(r.steps == 4);
    REQUIRE(r.history.size() == 2);
    CHECK(r.history[0].mean_cost == doctest::Approx(r.history[1].mean_cost).epsilon(1e-12));
}

TEST_CASE("training is independent of the thread count") {
    const auto samples = corpus(6, 2);
    const NetworkArchitecture arch = build_single_part_net(16);
    TrainingConfig c = quick_config();
    c.augmentation = true;
    const AugmentationPlan plan{{0, 7}, {1.0, 0.8}};
    c.threads = 1;
    const auto one = write_checkpoint(make_checkpoint(train_samples(arch, samples, plan, c), c));
    c.threads = 3;
    const auto three = write_checkpoint(make_checkpoint(train_samples(arch, samples, plan, c), c));
    CHECK(one == three);
    c.seed = 4;
    CHECK_FALSE(write_checkpoint(make_checkpoint(train_samples(arch, samples, plan, c), c)) == one);
}

TEST_CASE("stopping rules") {
    const auto samples = corpus(4, 3);
    const NetworkArchitecture arch = build_single_part_net(16);
    TrainingConfig c = quick_config();
    c.epochs = 50;
    c.max_steps = 5;
    const TrainResult capped = train_samples(arch, samples, AugmentationPlan::identity(), c);
    CHECK(capped.steps == 5);
    CHECK(capped.step_costs.size() == 5);

    c.max_steps = 0;
    c.batch_size = 4;
    c.learning_rate = 1e-3;
    c.stop_at_exact_accuracy = 1.0;
    const TrainResult early = train_samples(arch, samples, AugmentationPlan::identity(), c);
    CHECK(early.stopped_early);
    CHECK(early.history.back().exact_accuracy == 1.0);
    CHECK(early.history.size() < 50);
}

TEST_CASE("batch rotation trains on one group at a time") {
    const auto samples = corpus(6, 4);
    TrainingConfig c = quick_config();
    c.batch_size = 1;
    c.epochs = 4;
    c.rotation_groups = 3;
    c.rotation_epochs = 2;
    const TrainResult r = train_samples(build_single_part_net(16), samples, AugmentationPlan::identity(), c);
    REQUIRE(r.history.size() == 4);
    for (const auto& h : r.history) CHECK(h.samples == 2);
    CHECK(r.steps == 8);
}

TEST_CASE("divergence keeps the last finite parameters") {
    const auto samples = corpus(4, 5);
    TrainingConfig c = quick_config();
    c.learning_rate = 1e300;
    c.epochs = 5;
    const TrainResult r = train_samples(build_single_part_net(16), samples, AugmentationPlan::identity(), c);
    CHECK(r.diverged);
    for (std::size_t i = 0; i < flat_size(r.params.layers); ++i) REQUIRE(std::isfinite(flat_at(r.params.layers, i)));
    CHECK(make_checkpoint(r, c).metadata.at("diverged") == "true");
}

TEST_CASE("report of a constant predictor") {
    const EvaluationReport r = summarize(constant_rows(5), 2);
    CHECK(r.exact_accuracy == doctest::Approx(1.0 / 11));
    CHECK(r.accuracy_1step == doctest::Approx(3.0 / 11));
    CHECK(r.accuracy_2step == doctest::Approx(5.0 / 11));
    CHECK(r.max_error == doctest::Approx(5.0 / 11));
    std::size_t flagged = 0;
    for (const auto& row : r.rows) flagged += row.within_tolerance;
    CHECK(flagged == 5);
    for (int k = 0; k < 10; ++k) CHECK(r.accuracy_at(k) <= r.accuracy_at(k + 1));
    CHECK(r.accuracy_at(10) == 1.0);

    const std::string jsonl = report_to_jsonl(r);
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 12);
    CHECK(format_report_table(r).find("m10") != std::string::npos);
}

TEST_CASE("least squares against the reference") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x, y;
        const std::size_t n = 3 + rng() % 60;
        for (std::size_t i = 0; i < n; ++i) {
            x.push_back(u(rng));
            y.push_back(0.7 * x.back() - 0.2 + noise(rng));
        }
        const ConfidenceRegression fit = fit_line(x, y);
        const oracle::Line ref = oracle::ols_reference(x, y);
        CHECK(std::abs(fit.slope - ref.slope) < 1e-9);
        CHECK(std::abs(fit.intercept - ref.intercept) < 1e-9);
        CHECK(std::abs(fit.r_squared - ref.r_squared) < 1e-9);
        CHECK(fit.samples == n);
        CHECK_FALSE(fit.degenerate);
    }
}

TEST_CASE("least squares edge cases") {
    const std::vector<double> x{0, 1, 2, 3}, line{1, 3, 5, 7};
    const ConfidenceRegression exact = fit_line(x, line);
    CHECK(exact.slope == doctest::Approx(2.0));
    CHECK(exact.intercept == doctest::Approx(1.0));
    CHECK(exact.r_squared == 1.0);

    const std::vector<double> same_x{0.5, 0.5, 0.5}, some_y{1, 2, 6};
    const ConfidenceRegression flat = fit_line(same_x, some_y);
    CHECK(flat.degenerate);
    CHECK(flat.r_squared == 0.0);
    CHECK(flat.slope == 0.0);
    CHECK(flat.intercept == doctest::Approx(3.0));

    const std::vector<double> two{1, 2};
    CHECK_THROWS_AS(fit_line(two, two), Error);
    CHECK_THROWS_AS(fit_line(x, two), Error);
}

TEST_CASE("confidence regression uses peak deficit and error") {
    std::vector<EvaluationRow> rows = {{"a", 5, 5, 1.0, false}, {"b", 5, 7, 0.6, false}, {"c", 5, 9, 0.2, false}};
    const ConfidenceRegression r = confidence_regression(summarize(rows));
    CHECK(r.slope == doctest::Approx((4.0 / 11) / 0.8));
    CHECK(r.intercept == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.r_squared == doctest::Approx(1.0));
}

TEST_CASE("train, evaluate and assess through a dataset") {
    TempDir dir;
    Dataset ds(dir.path());
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < 12; ++i) {
        const auto shape = shapes::random_shape(6, i);
        const std::string id = ds.ingest_model(write_stl(shape.mesh), SourceFormat::stl_binary, 16, shape.name);
        ds.record_annotation(id, "q", shapes::slenderness_score(ds.load_grid(id)), "rule", "1970-01-01T00:00:00Z");
        ids.push_back(id);
    }
    ds.set_plan(AugmentationPlan::identity());
    ds.assign_splits(3, 1);

    TrainingConfig c = quick_config();
    c.question_id = "q";
    c.checkpoint_path = (dir.path() / "q.ckpt").string();
    const TrainResult r = train(ds, c);
    CHECK(r.history.back().samples == 9);
    REQUIRE(std::filesystem::exists(c.checkpoint_path));
    const Checkpoint ckpt = read_checkpoint(read_file(c.checkpoint_path));
    CHECK(ckpt.metadata.at("question_id") == "q");
    CHECK(ckpt.metadata.at("training_config").find("checkpoint_path") == std::string::npos);

    const EvaluationReport rep = evaluate(ckpt, ds, c);
    CHECK(rep.rows.size() == 3);
    for (const auto& row : rep.rows) CHECK(ds.snapshot()->split_of(row.model_id) == Split::eval);

    const auto bytes = write_stl(shapes::box({0, 0, 0}, {1, 0.2, 0.2}));
    const Assessment a = assess(ckpt, bytes, SourceFormat::stl_binary);
    const Assessment b = assess(ckpt, bytes, SourceFormat::stl_binary);
    CHECK(a.score == b.score);
    CHECK(std::memcmp(a.curve.data(), b.curve.data(), sizeof(a.curve)) == 0);
    CHECK(a.band_low == std::max(0, a.score - 2));
    CHECK(a.band_high == std::min(10, a.score + 2));
    CHECK(a.peak_height == decode_score(a.curve).peak_height);
    CHECK_THROWS_AS(assess(ckpt, std::vector<std::uint8_t>{}, SourceFormat::stl_binary), Error);
    CHECK_THROWS_AS(assess_grid(ckpt, VoxelGrid({8, 8, 8})), Error);
}

TEST_CASE("training without labels is an error") {
    TempDir dir;
    Dataset ds(dir.path());
    ds.ingest_model(write_stl(shapes::box({0, 0, 0}, {1, 1, 1})), SourceFormat::stl_binary, 16);
    TrainingConfig c = quick_config();
    c.question_id = "unlabelled";
    CHECK_THROWS_AS(train(ds, c), Error);
}
