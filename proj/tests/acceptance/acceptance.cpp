// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "neurocad/augment.hpp"
#include "neurocad/shapes.hpp"
#include "neurocad/trainer.hpp"
#include "oracles/geometry_oracle.hpp"
#include "oracles/numeric_oracle.hpp"
#include "oracles/rotation_oracle.hpp"
#include "temp_dir.hpp"

using namespace neurocad;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

std::vector<oracle::Tri> soup(const TriangleMesh& m) {
    std::vector<oracle::Tri> out;
    for (const auto& t : m.triangles) {
        out.push_back({{{t.v0.x, t.v0.y, t.v0.z}, {t.v1.x, t.v1.y, t.v1.z}, {t.v2.x, t.v2.y, t.v2.z}}});
    }
    return out;
}

Verdict voxel_parity() {
    const auto start = Clock::now();
    const std::vector<std::pair<std::string, TriangleMesh>> meshes = {
        {"cube", shapes::box({0, 0, 0}, {1, 1, 1})},
        {"sphere", shapes::sphere(0.5, 16, 32)},
        {"cylinder", shapes::cylinder(0.3, 1.0, 32)}};
    std::size_t compared = 0, mismatched = 0;
    double voxelize_seconds = 0;
    for (const auto& [name, mesh] : meshes) {
        const auto tris = soup(mesh);
        for (int res : {8, 16, 32}) {
            const auto t0 = Clock::now();
            const VoxelGrid solid = voxelize(mesh, res);
            voxelize_seconds += seconds_since(t0);
            const VoxelGrid surface = rasterize_surface(mesh, res);
            const double cell = solid.scale / res;
            for (int z = 0; z < res; ++z)
                for (int y = 0; y < res; ++y)
                    for (int x = 0; x < res; ++x) {
                        if (surface.at(x, y, z)) continue;
                        const oracle::P3 p{solid.translate.x + (x + 0.5) * cell, solid.translate.y + (y + 0.5) * cell,
                                           solid.translate.z + (z + 0.5) * cell};
                        ++compared;
                        mismatched += solid.at(x, y, z) != oracle::inside_by_parity(tris, p);
                    }
        }
    }
    const double total = seconds_since(start);
    return {mismatched == 0 && total < 10.0,
            fmt("%zu/%zu non-surface cells agree (required 100%%), %.2f s total incl. oracle, voxelizer %.3f s (limit 10 s)",
                compared - mismatched, compared, total, voxelize_seconds)};
}

Verdict binvox_round_trip() {
    std::mt19937_64 rng(2024);
    std::size_t exact = 0;
    for (int i = 0; i < 200; ++i) {
        const GridDims d{1 + static_cast<int>(rng() % 64), 1 + static_cast<int>(rng() % 64), 1 + static_cast<int>(rng() % 64)};
        VoxelGrid g(d, {static_cast<double>(rng() % 100) / 7.0, -1.25, 0.5}, 0.1 + (rng() % 50) / 10.0);
        const double density = i % 10 == 0 ? 0.0 : i % 10 == 1 ? 1.0 : std::uniform_real_distribution<double>(0, 1)(rng);
        std::bernoulli_distribution on(density);
        for (auto& c : g.cells()) c = on(rng);
        const auto bytes = write_binvox(g);
        const VoxelGrid back = read_binvox(bytes);
        exact += back == g && write_binvox(back) == bytes;
    }
    return {exact == 200, fmt("%zu/200 grids bit-exact (required 200)", exact)};
}

Verdict stl_round_trip() {
    std::size_t exact = 0;
    std::vector<std::vector<std::uint8_t>> corpus;
    for (std::size_t i = 0; i < 50; ++i) {
        const auto bytes = write_stl(shapes::random_shape(77, i).mesh);
        const TriangleMesh parsed = parse_stl(bytes);
        exact += write_stl(parsed) == bytes;
        corpus.push_back(bytes);
    }
    corpus.push_back(write_stl(shapes::cylinder(0.2, 0.5, 10), StlFlavor::ascii));

    std::mt19937_64 rng(99);
    std::size_t rejected = 0, accepted = 0, crashes = 0;
    for (int i = 0; i < 10000; ++i) {
        auto b = corpus[rng() % corpus.size()];
        switch (rng() % 4) {
            case 0:
                for (int e = 0, n = 1 + static_cast<int>(rng() % 16); e < n; ++e) b[rng() % b.size()] = static_cast<std::uint8_t>(rng());
                break;
            case 1: b.resize(rng() % b.size()); break;
            case 2:
                if (b.size() > 84) b[80 + rng() % 4] = static_cast<std::uint8_t>(rng());
                break;
            default:
                b.insert(b.begin() + static_cast<std::ptrdiff_t>(rng() % b.size()), static_cast<std::uint8_t>(rng()));
        }
        try {
            const TriangleMesh m = parse_stl(b);
            for (const auto& t : m.triangles) crashes += !(t.v0.finite() && t.v1.finite() && t.v2.finite());
            ++accepted;
        } catch (const ParseError&) {
            ++rejected;
        } catch (...) {
            ++crashes;
        }
    }
    return {exact == 50 && crashes == 0,
            fmt("%zu/50 models bit-exact (required 50); 10000 fuzzed files: %zu rejected, %zu accepted, %zu crashes (required 0)",
                exact, rejected, accepted, crashes)};
}

Verdict label_encoding() {
    int decoded = 0;
    for (int a = 0; a <= 10; ++a) decoded += decode_score(encode_score(Score(a))).score == a;
    const ScoreCurve c = encode_score(Score(5));
    const double err = std::max(std::abs(c[4] - std::exp(-0.25)), std::abs(c[6] - std::exp(-0.25)));
    return {decoded == 11 && c[5] == 1.0 && err <= 1e-12,
            fmt("%d/11 decode(encode(A)) = A; peak %.15f at neuron 5; neighbour error %.1e (limit 1e-12)", decoded, c[5], err)};
}

Verdict cost_conformance() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    int zero_self = 0;
    for (int i = 0; i < 1000; ++i) {
        ScoreCurve e, p;
        for (int k = 0; k < 11; ++k) {
            e[k] = i % 3 == 0 ? encode_score(Score(static_cast<int>(rng() % 11)))[k] : u(rng);
            p[k] = u(rng);
        }
        worst = std::max(worst, std::abs(cost(e, p) - oracle::cost_reference(e.data(), p.data())));
        zero_self += cost(e, e) == 0.0 && cost(p, p) == 0.0;
    }
    return {worst <= 1e-12 && zero_self == 1000,
            fmt("max |cost - reference| = %.2e over 1000 pairs (limit 1e-12); cost(x,x) = 0 exactly in %d/1000", worst, zero_self)};
}

Verdict gradient_correctness() {
    const auto start = Clock::now();
    const NetworkArchitecture arch = NetworkArchitecture::from_layers(
        "gradient_check", {8, 8, 8},
        {LayerSpec{LayerKind::conv3d_pool, 4, {2, 2, 2}, {}}, LayerSpec{LayerKind::conv3d_pool, 6, {2, 2, 2}, {}},
         LayerSpec{LayerKind::fully_connected, 11, {1, 1, 1}, {}}});
    NetworkParams params = init_params(arch, 31);
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& l : params.layers)
        for (double& b : l.biases.values) b = u(rng);
    FloatTensor3 x{arch.input, {}};
    for (std::size_t i = 0; i < arch.input.count(); ++i) x.values.push_back((rng() % 2) * 0.5 + u(rng));
    const ScoreCurve expected = encode_score(Score(6));

    // Central differences through forward() and cost() alone, against backward().
    const BackwardResult analytic = backward(arch, params, x, expected);
    const double h = 1e-4;
    double worst = 0.0;
    std::size_t checked = 0;
    NetworkParams probe = params;
    for (std::size_t i = 0; i < flat_size(params.layers); ++i) {
        const double original = flat_at(params.layers, i);
        flat_at(probe.layers, i) = original + h;
        const double plus = cost(expected, forward(arch, probe, x));
        flat_at(probe.layers, i) = original - h;
        const double minus = cost(expected, forward(arch, probe, x));
        flat_at(probe.layers, i) = original;
        const double numeric = (plus - minus) / (2 * h), a = flat_at(analytic.gradients, i);
        worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}));
        ++checked;
    }
    const GradientCheckReport r = gradient_check(arch, params, x, expected, h);
    const double elapsed = seconds_since(start);
    return {worst < 1e-3 && r.max_rel_err < 1e-3 && elapsed < 300.0,
            fmt("max relative error %.2e over all %zu parameters (limit 1e-3); built-in checker %.2e; %.2f s (limit 300 s)",
                worst, checked, r.max_rel_err, elapsed)};
}

Verdict table_conformance() {
    const NetworkArchitecture a = build_single_part_net(64);
    const std::vector<std::vector<int>> shapes_out = {{32, 32, 32, 32}, {16, 16, 16, 64}, {8, 8, 8, 128}, {4, 4, 4, 256},
                                                      {2, 2, 2, 512},   {2, 2, 2, 512},   {2, 2, 2, 512}, {1, 1, 1, 512},
                                                      {128},            {11}};
    bool ok = a.layers.size() == shapes_out.size();
    for (std::size_t i = 0; ok && i < shapes_out.size(); ++i) {
        ok = a.layers[i].output_shape == shapes_out[i] && (i >= 8 || a.layers[i].filter_size == std::array<int, 3>{2, 2, 2});
    }
    const std::size_t expected_params =
        oracle::param_count_reference({32, 64, 128, 256, 512, 512, 512, 512}, {128, 11}, 512);
    ok = ok && a.parameter_count() == expected_params;
    return {ok, fmt("%zu layers, sizes 32^3..1^3 x 32..512 filters, 128, 11; %zu parameters (counting oracle %zu)",
                    a.layers.size(), a.parameter_count(), expected_params)};
}

Verdict augmentation_count() {
    const AugmentationPlan plan = AugmentationPlan::default_plan();
    std::size_t total = 0, per_model_ok = 0;
    for (std::size_t i = 0; i < 187; ++i) {
        const auto invariants = generate_invariants(voxelize(shapes::random_shape(187, i).mesh, 16), plan);
        total += invariants.size();
        per_model_ok += invariants.size() == 120;
    }
    const auto group = oracle::cube_rotation_group();
    std::set<oracle::M3> ours;
    bool closed = true;
    for (const auto& a : Orientation::all()) {
        oracle::M3 m{};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) m[r][c] = a.matrix()[r][c];
        ours.insert(m);
        closed = closed && a.compose(a.inverse()) == Orientation(0) && a.inverse().compose(a) == Orientation(0);
        for (const auto& b : Orientation::all()) closed = closed && Orientation::find(a.compose(b).matrix()) >= 0;
    }
    const bool ok = per_model_ok == 187 && total == 22440 && ours == group && closed;
    return {ok, fmt("%zu/187 models emit 120; total %zu (required 22440); 24 orientations equal the closure oracle: %s; "
                    "closure and inverses: %s",
                    per_model_ok, total, ours == group ? "yes" : "no", closed ? "yes" : "no")};
}

Verdict untrained_baseline() {
    const NetworkArchitecture arch = build_single_part_net(16);
    const NetworkParams params = init_params(arch, 550);
    std::vector<int> labels;
    for (int a = 0; a <= 10; ++a) labels.insert(labels.end(), 50, a);
    std::mt19937_64 rng(551);
    std::shuffle(labels.begin(), labels.end(), rng);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const VoxelGrid g = voxelize(shapes::random_shape(550, i).mesh, 16);
        hits += decode_score(forward(arch, params, to_float_tensor(g))).score == labels[i];
    }
    const double acc = 100.0 * static_cast<double>(hits) / labels.size();
    return {std::abs(acc - 100.0 / 11) <= 3.0,
            fmt("exact accuracy %.2f%% on 550 balanced samples (required 9.09 +/- 3 pp)", acc)};
}

// A data directory of procedural shapes at 16^3, labelled by the slenderness rule.
void populate(Dataset& ds, std::uint64_t seed, std::size_t count, const std::string& question) {
    for (std::size_t i = 0; i < count; ++i) {
        const auto shape = shapes::random_shape(seed, i);
        const std::string id = ds.ingest_model(write_stl(shape.mesh), SourceFormat::stl_binary, 16, shape.name);
        ds.record_annotation(id, question, shapes::slenderness_score(ds.load_grid(id)), "rule:slenderness",
                             "1970-01-01T00:00:00Z");
    }
}

Verdict overfit() {
    TempDir dir("neurocad-overfit");
    Dataset ds(dir.path());
    populate(ds, 7, 20, "slenderness");
    ds.set_plan(AugmentationPlan::identity());

    TrainingConfig c;
    c.question_id = "slenderness";
    c.batch_size = 20;
    c.epochs = 5000;
    c.max_steps = 5000;
    c.stop_at_exact_accuracy = 1.0;
    c.seed = 7;
    // ADAM makes no monotonicity promise; at the low end of the learning-rate
    // range full-batch training descends without transient bumps.
    c.learning_rate = 1e-4;
    const auto start = Clock::now();
    const TrainResult r = train(ds, c);
    const double elapsed = seconds_since(start);

    const auto samples = training_samples(ds, "slenderness", c.aggregation);
    const EvaluationReport after = evaluate_samples(r.arch, r.params, samples, c.tolerance_steps);
    const std::size_t from = (r.step_costs.size() + 9) / 10;
    std::size_t increases = 0;
    for (std::size_t i = std::max<std::size_t>(from, 1); i < r.step_costs.size(); ++i) {
        increases += r.step_costs[i] > r.step_costs[i - 1] * (1 + 1e-12);
    }
    const bool ok = !r.diverged && r.steps <= 5000 && after.exact_accuracy == 1.0 && elapsed < 1800.0 && increases == 0;
    return {ok, fmt("%zu shapes, lr %g, exact accuracy %.0f%% after %llu steps (limit 5000), %.1f s (limit 1800 s); "
                    "cost increases after the first 10%% of steps: %zu (required 0, relative slack 1e-12)",
                    samples.size(), c.learning_rate, 100.0 * after.exact_accuracy, static_cast<unsigned long long>(r.steps), elapsed,
                    increases)};
}

Verdict generalization() {
    TempDir dir("neurocad-generalize");
    Dataset ds(dir.path());
    populate(ds, 11, 200, "slenderness");
    ds.set_plan(AugmentationPlan::identity());
    ds.assign_splits(20, 11);

    TrainingConfig c;
    c.question_id = "slenderness";
    c.batch_size = 16;
    c.epochs = 60;
    c.seed = 11;
    const TrainResult r = train(ds, c);
    const EvaluationReport rep = evaluate(make_checkpoint(r, c), ds, c);
    const std::size_t trained = r.history.empty() ? 0 : r.history.back().samples;
    return {trained == 180 && rep.rows.size() == 20 && rep.accuracy_2step >= 0.8,
            fmt("%zu train / %zu eval; eval accuracy %.0f%% at 2-step tolerance (required >= 80%%), %.0f%% at 1 step, "
                "%.0f%% exact",
                trained, rep.rows.size(), 100 * rep.accuracy_2step, 100 * rep.accuracy_1step, 100 * rep.exact_accuracy)};
}

Verdict confidence_regression_check() {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.1);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x, y;
        for (std::size_t i = 0, n = 3 + rng() % 200; i < n; ++i) {
            x.push_back(u(rng));
            y.push_back(0.3 * x.back() + 0.05 + noise(rng));
        }
        const ConfidenceRegression fit = fit_line(x, y);
        const oracle::Line ref = oracle::ols_reference(x, y);
        worst = std::max({worst, std::abs(fit.slope - ref.slope), std::abs(fit.intercept - ref.intercept),
                          std::abs(fit.r_squared - ref.r_squared)});
    }
    std::vector<double> lx, ly;
    for (int i = 0; i < 20; ++i) {
        lx.push_back(i * 0.05);
        ly.push_back(2.0 * lx.back() - 0.5);
    }
    const ConfidenceRegression linear = fit_line(lx, ly);
    const std::vector<double> cx(10, 0.25);
    std::vector<double> cy;
    for (int i = 0; i < 10; ++i) cy.push_back(u(rng));
    const ConfidenceRegression flat = fit_line(cx, cy);
    const bool ok = worst <= 1e-9 && std::abs(linear.r_squared - 1.0) <= 1e-12 && flat.degenerate && flat.r_squared == 0.0;
    return {ok, fmt("max deviation from oracle %.1e over 200 fits (limit 1e-9); linear R^2 = %.15f (limit 1e-12); "
                    "zero-variance abscissa: flagged %s, R^2 = %g",
                    worst, linear.r_squared, flat.degenerate ? "yes" : "no", flat.r_squared)};
}

Verdict determinism() {
    TempDir dir("neurocad-determinism");
    Dataset ds(dir.path());
    populate(ds, 13, 12, "slenderness");
    ds.set_plan(AugmentationPlan{{0, 5, 10, 17}, {1.0, 0.8}});
    ds.assign_splits(2, 13);

    std::vector<std::vector<std::uint8_t>> checkpoints;
    for (int threads : {1, 2, 4}) {
        TrainingConfig c;
        c.question_id = "slenderness";
        c.epochs = 2;
        c.batch_size = 8;
        c.seed = 21;
        c.threads = threads;
        c.checkpoint_path = (dir.path() / ("t" + std::to_string(threads) + ".ckpt")).string();
        train(ds, c);
        checkpoints.push_back(read_file(c.checkpoint_path));
    }
    const bool same = checkpoints[0] == checkpoints[1] && checkpoints[0] == checkpoints[2];
    return {same && !checkpoints[0].empty(),
            fmt("checkpoints from 1, 2 and 4 threads are %s (%zu bytes each)", same ? "byte-identical" : "DIFFERENT",
                checkpoints[0].size())};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"voxelizer oracle parity", voxel_parity},
        {"binvox round trip", binvox_round_trip},
        {"STL round trip and fuzzing", stl_round_trip},
        {"label encoding", label_encoding},
        {"cost function conformance", cost_conformance},
        {"gradient correctness", gradient_correctness},
        {"single-part architecture", table_conformance},
        {"augmentation count and rotation group", augmentation_count},
        {"untrained baseline", untrained_baseline},
        {"overfit milestone", overfit},
        {"generalization smoke", generalization},
        {"confidence regression", confidence_regression_check},
        {"training determinism", determinism},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
