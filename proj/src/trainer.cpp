#include "neurocad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "neurocad/augment.hpp"
#include "neurocad/labels.hpp"

namespace neurocad {

using nlohmann::json;

void TrainingConfig::validate() const {
    if (question_id.empty()) throw Error("training config needs a question id");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw Error("learning rate must be finite and >= 0");
    if (epochs <= 0) throw Error("epochs must be positive");
    if (batch_size <= 0) throw Error("batch size must be positive");
    if (resolution < 0) throw Error("resolution must be positive");
    if (tolerance_steps < 0 || tolerance_steps > kMaxScore) throw Error("tolerance steps outside [0, 10]");
    if (stop_at_exact_accuracy < 0.0 || stop_at_exact_accuracy > 1.0) throw Error("stop accuracy outside [0, 1]");
    if (checkpoint_every < 0) throw Error("checkpoint cadence must be >= 0");
    if (rotation_groups <= 0 || rotation_epochs <= 0) throw Error("rotation groups and epochs must be positive");
    if (threads < 0) throw Error("threads must be >= 0");
}

json to_json(const TrainingConfig& c) {
    return {{"question_id", c.question_id},
            {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"resolution", c.resolution},
            {"augmentation", c.augmentation},
            {"tolerance_steps", c.tolerance_steps},
            {"aggregation", std::string(to_string(c.aggregation))},
            {"max_steps", c.max_steps},
            {"stop_at_exact_accuracy", c.stop_at_exact_accuracy},
            {"checkpoint_every", c.checkpoint_every},
            {"checkpoint_path", c.checkpoint_path},
            {"rotation_groups", c.rotation_groups},
            {"rotation_epochs", c.rotation_epochs},
            {"threads", c.threads}};
}

TrainingConfig training_config_from_json(const json& j) {
    if (!j.is_object()) throw Error("training config must be a JSON object");
    static const char* kKnown[] = {"question_id", "learning_rate", "epochs", "batch_size", "seed", "resolution",
                                   "augmentation", "tolerance_steps", "aggregation", "max_steps",
                                   "stop_at_exact_accuracy", "checkpoint_every", "checkpoint_path",
                                   "rotation_groups", "rotation_epochs", "threads"};
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return key == k; }) ==
            std::end(kKnown)) {
            throw Error("unknown training config key '" + key + "'");
        }
    }
    TrainingConfig c;
    try {
        c.question_id = j.value("question_id", c.question_id);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        c.resolution = j.value("resolution", c.resolution);
        c.augmentation = j.value("augmentation", c.augmentation);
        c.tolerance_steps = j.value("tolerance_steps", c.tolerance_steps);
        if (j.contains("aggregation")) c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
        c.max_steps = j.value("max_steps", c.max_steps);
        c.stop_at_exact_accuracy = j.value("stop_at_exact_accuracy", c.stop_at_exact_accuracy);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path);
        c.rotation_groups = j.value("rotation_groups", c.rotation_groups);
        c.rotation_epochs = j.value("rotation_epochs", c.rotation_epochs);
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw Error(std::string("bad training config: ") + e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr std::size_t kRawGrid = static_cast<std::size_t>(-1);

struct SampleRef {
    std::size_t sample;
    std::size_t invariant;  // kRawGrid for the unaugmented grid
};

void add_scaled(ParamSet& acc, const ParamSet& g, double scale) {
    for (std::size_t l = 0; l < acc.size(); ++l) {
        auto& w = acc[l].weights.values;
        const auto& gw = g[l].weights.values;
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * gw[i];
        auto& b = acc[l].biases.values;
        const auto& gb = g[l].biases.values;
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += scale * gb[i];
    }
}

bool all_finite(const ParamSet& set) {
    for (const auto& l : set) {
        for (double v : l.weights.values) {
            if (!std::isfinite(v)) return false;
        }
        for (double v : l.biases.values) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

template <class Rng>
void shuffle(std::vector<SampleRef>& v, Rng& rng) {
    // Written out rather than std::shuffle so the order is the same on every
    // standard library.
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng() % i)]);
    }
}

int worker_count(int requested) {
#ifdef _OPENMP
    return requested > 0 ? requested : omp_get_max_threads();
#else
    (void)requested;
    return 1;
#endif
}

void write_checkpoint_file(const TrainResult& result, const TrainingConfig& config) {
    write_file_atomic(config.checkpoint_path, write_checkpoint(make_checkpoint(result, config)));
}

}  // namespace

TrainResult train_samples(const NetworkArchitecture& arch, const std::vector<TrainingSample>& samples,
                          const AugmentationPlan& plan, const TrainingConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (samples.empty()) throw Error("empty training set for question '" + config.question_id + "'");
    if (config.augmentation) plan.validate();
    for (const auto& s : samples) {
        if (!valid_score(s.score)) throw Error("training label outside [0, 10] for model " + s.model_id);
        const GridDims d = s.grid.dims();
        if (d.x != arch.input.x || d.y != arch.input.y || d.z != arch.input.z) {
            throw Error("model " + s.model_id + " has a " + std::to_string(d.x) + "x" + std::to_string(d.y) + "x" +
                        std::to_string(d.z) + " grid; the network expects " + std::to_string(arch.input.x) + "x" +
                        std::to_string(arch.input.y) + "x" + std::to_string(arch.input.z));
        }
    }

    TrainResult result;
    result.arch = arch;
    result.params = init_params(arch, config.seed);

    std::vector<ScoreCurve> expected;
    for (const auto& s : samples) expected.push_back(encode_score(Score(s.score, config.question_id)));

    std::vector<SampleRef> pool;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (config.augmentation) {
            for (std::size_t k = 0; k < plan.size(); ++k) pool.push_back({i, k});
        } else {
            pool.push_back({i, kRawGrid});
        }
    }

    std::mt19937_64 rng(config.seed ^ 0x5DEECE66Dull);
    std::vector<std::vector<SampleRef>> groups;
    if (config.rotation_groups > 1) {
        shuffle(pool, rng);
        const std::size_t n = static_cast<std::size_t>(config.rotation_groups);
        for (std::size_t g = 0; g < n; ++g) {
            const std::size_t lo = pool.size() * g / n, hi = pool.size() * (g + 1) / n;
            if (hi > lo) groups.emplace_back(pool.begin() + lo, pool.begin() + hi);
        }
    } else {
        groups.push_back(pool);
    }

    const int workers = worker_count(config.threads);
    const AdamConfig adam{config.learning_rate};
    const std::size_t batch_size = static_cast<std::size_t>(config.batch_size);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::vector<SampleRef> order = groups[static_cast<std::size_t>((epoch - 1) / config.rotation_epochs) % groups.size()];
        shuffle(order, rng);

        double cost_sum = 0.0;
        std::size_t exact = 0, tolerant = 0, seen = 0;
        bool stop = false;

        for (std::size_t start = 0; start < order.size() && !stop; start += batch_size) {
            const std::size_t n = std::min(batch_size, order.size() - start);
            ParamSet grad = zero_like(result.params.layers);
            double batch_cost = 0.0;
            std::size_t batch_exact = 0, batch_tolerant = 0;

            // Waves of `workers` samples run in parallel; their gradients are
            // added in sample order afterwards.
            std::vector<BackwardResult> wave(static_cast<std::size_t>(workers));
            for (std::size_t w0 = 0; w0 < n; w0 += wave.size()) {
                const std::size_t wn = std::min(wave.size(), n - w0);
#pragma omp parallel for num_threads(workers) schedule(static, 1)
                for (std::size_t j = 0; j < wn; ++j) {
                    const SampleRef ref = order[start + w0 + j];
                    const TrainingSample& s = samples[ref.sample];
                    const FloatTensor3 input = to_float_tensor(
                        ref.invariant == kRawGrid ? s.grid : make_invariant(s.grid, plan, ref.invariant));
                    wave[j] = backward(arch, result.params, input, expected[ref.sample]);
                }
                for (std::size_t j = 0; j < wn; ++j) {
                    const SampleRef ref = order[start + w0 + j];
                    add_scaled(grad, wave[j].gradients, 1.0 / static_cast<double>(n));
                    batch_cost += wave[j].cost;
                    const int predicted = decode_score(wave[j].prediction).score;
                    batch_exact += predicted == samples[ref.sample].score;
                    batch_tolerant += within_tolerance(predicted, samples[ref.sample].score, config.tolerance_steps);
                }
            }

            if (!std::isfinite(batch_cost) || !all_finite(grad)) {
                result.diverged = true;
                stop = true;
                break;
            }
            adam_step(result.params, grad, adam);
            ++result.steps;
            result.step_costs.push_back(batch_cost / static_cast<double>(n));
            cost_sum += batch_cost;
            exact += batch_exact;
            tolerant += batch_tolerant;
            seen += n;
            if (config.max_steps && result.steps >= config.max_steps) stop = true;
        }

        if (seen > 0) {
            EpochRecord rec;
            rec.epoch = epoch;
            rec.steps = result.steps;
            rec.samples = seen;
            rec.mean_cost = cost_sum / static_cast<double>(seen);
            rec.exact_accuracy = static_cast<double>(exact) / static_cast<double>(seen);
            rec.tolerance_accuracy = static_cast<double>(tolerant) / static_cast<double>(seen);
            result.history.push_back(rec);
            if (on_epoch) on_epoch(rec);
            if (config.stop_at_exact_accuracy > 0.0 && rec.exact_accuracy >= config.stop_at_exact_accuracy) {
                result.stopped_early = true;
                stop = true;
            }
        }
        if (!config.checkpoint_path.empty() && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
            write_checkpoint_file(result, config);
        }
        if (stop) break;
    }
    if (!config.checkpoint_path.empty()) write_checkpoint_file(result, config);
    return result;
}

std::vector<TrainingSample> training_samples(const Dataset& dataset, const std::string& question_id,
                                             Aggregation aggregation, Split split) {
    const auto manifest = dataset.snapshot();
    const auto labels = manifest->labels(question_id, aggregation);
    std::vector<TrainingSample> out;
    for (const auto& m : manifest->models) {
        const auto it = labels.find(m.id);
        if (it == labels.end() || manifest->split_of(m.id) != split) continue;
        out.push_back({m.id, dataset.load_grid(m.id), it->second});
    }
    return out;
}

TrainResult train(const Dataset& dataset, const TrainingConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    const auto manifest = dataset.snapshot();
    auto samples = training_samples(dataset, config.question_id, config.aggregation, Split::train);
    if (samples.empty()) throw Error("no annotated training models for question '" + config.question_id + "'");
    for (const auto& s : samples) {
        if (manifest->split_of(s.model_id) == Split::eval) throw Error("evaluation model leaked into training");
    }
    const int resolution = config.resolution ? config.resolution : samples.front().grid.dims().x;
    return train_samples(build_single_part_net(resolution), samples, manifest->plan, config, on_epoch);
}

Checkpoint make_checkpoint(const TrainResult& result, const TrainingConfig& config) {
    Checkpoint c;
    c.arch = result.arch;
    c.params = result.params;
    c.metadata["question_id"] = config.question_id;
    c.metadata["seed"] = std::to_string(config.seed);
    c.metadata["steps"] = std::to_string(result.steps);
    c.metadata["epochs_completed"] = std::to_string(result.history.empty() ? 0 : result.history.back().epoch);
    c.metadata["diverged"] = result.diverged ? "true" : "false";
    // Where and on how many threads it ran does not belong in the weights file.
    json recorded = to_json(config);
    recorded.erase("threads");
    recorded.erase("checkpoint_path");
    c.metadata["training_config"] = recorded.dump();
    return c;
}

// ---------------------------------------------------------------------------
// Evaluation

double EvaluationReport::accuracy_at(int steps) const {
    if (rows.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& r : rows) hits += within_tolerance(r.predicted, r.expected, steps);
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

EvaluationReport summarize(std::vector<EvaluationRow> rows, int tolerance_steps) {
    EvaluationReport report;
    report.tolerance_steps = tolerance_steps;
    int worst = 0;
    for (auto& r : rows) {
        r.within_tolerance = within_tolerance(r.predicted, r.expected, tolerance_steps);
        worst = std::max(worst, std::abs(r.predicted - r.expected));
    }
    report.rows = std::move(rows);
    report.accuracy_2step = report.accuracy_at(2);
    report.accuracy_1step = report.accuracy_at(1);
    report.exact_accuracy = report.accuracy_at(0);
    report.max_error = static_cast<double>(worst) / kScoreLevels;
    return report;
}

EvaluationReport evaluate_samples(const NetworkArchitecture& arch, const NetworkParams& params,
                                  const std::vector<TrainingSample>& samples, int tolerance_steps) {
    std::vector<EvaluationRow> rows(samples.size());
#pragma omp parallel for schedule(static, 1)
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const DecodedScore d = decode_score(forward(arch, params, to_float_tensor(samples[i].grid)));
        rows[i] = {samples[i].model_id, samples[i].score, d.score, d.peak_height, false};
    }
    return summarize(std::move(rows), tolerance_steps);
}

EvaluationReport evaluate(const Checkpoint& checkpoint, const Dataset& dataset, const TrainingConfig& config) {
    const auto samples = training_samples(dataset, config.question_id, config.aggregation, Split::eval);
    if (samples.empty()) {
        throw Error("no annotated evaluation models for question '" + config.question_id + "'");
    }
    EvaluationReport report = evaluate_samples(checkpoint.arch, checkpoint.params, samples, config.tolerance_steps);
    report.seed = config.seed;
    report.question_id = config.question_id;
    return report;
}

std::string report_to_jsonl(const EvaluationReport& report) {
    std::string out;
    for (const auto& r : report.rows) {
        out += json{{"record", "row"},
                    {"model_id", r.model_id},
                    {"expected", r.expected},
                    {"predicted", r.predicted},
                    {"peak_height", r.peak_height},
                    {"within_tolerance", r.within_tolerance}}
                   .dump();
        out += '\n';
    }
    out += json{{"record", "summary"},
                {"question_id", report.question_id},
                {"seed", report.seed},
                {"models", report.rows.size()},
                {"tolerance_steps", report.tolerance_steps},
                {"accuracy_2step", report.accuracy_2step},
                {"accuracy_1step", report.accuracy_1step},
                {"exact_accuracy", report.exact_accuracy},
                {"max_error", report.max_error}}
               .dump();
    out += '\n';
    return out;
}

std::string format_report_table(const EvaluationReport& report) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-18s %8s %9s %6s %4s\n", "model", "expected", "predicted", "peak", "ok");
    os << line;
    for (const auto& r : report.rows) {
        std::snprintf(line, sizeof line, "%-18s %8d %9d %6.3f %4s\n", r.model_id.c_str(), r.expected, r.predicted,
                      r.peak_height, r.within_tolerance ? "yes" : "no");
        os << line;
    }
    std::snprintf(line, sizeof line,
                  "\n%zu models, question %s, seed %llu\naccuracy 2-step %.1f%%  1-step %.1f%%  exact %.1f%%  max error %.1f%%\n",
                  report.rows.size(), report.question_id.c_str(), static_cast<unsigned long long>(report.seed),
                  100.0 * report.accuracy_2step, 100.0 * report.accuracy_1step, 100.0 * report.exact_accuracy,
                  100.0 * report.max_error);
    os << line;
    return os.str();
}

ConfidenceRegression fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw Error("regression needs equally many x and y values");
    if (x.size() < 3) throw Error("regression needs at least 3 samples, got " + std::to_string(x.size()));
    ConfidenceRegression r;
    r.samples = x.size();
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0) {
        r.degenerate = true;
        r.slope = 0.0;
        r.intercept = my;
        r.r_squared = 0.0;
        return r;
    }
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    if (syy == 0.0) {
        r.r_squared = 1.0;  // constant y is fitted exactly
    } else {
        double ss_res = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double e = y[i] - (r.intercept + r.slope * x[i]);
            ss_res += e * e;
        }
        r.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
    }
    return r;
}

ConfidenceRegression confidence_regression(const EvaluationReport& report) {
    std::vector<double> x, y;
    for (const auto& r : report.rows) {
        x.push_back(std::abs(r.peak_height - 1.0));
        y.push_back(std::abs(r.predicted - r.expected) / static_cast<double>(kScoreLevels));
    }
    return fit_line(x, y);
}

// ---------------------------------------------------------------------------
// Assessment

Assessment assess_grid(const Checkpoint& checkpoint, const VoxelGrid& grid, int tolerance_steps) {
    const GridDims d = grid.dims();
    const GridDims in = checkpoint.arch.input;
    if (d.x != in.x || d.y != in.y || d.z != in.z) throw Error("grid does not match the network input size");
    Assessment a;
    a.curve = forward(checkpoint.arch, checkpoint.params, to_float_tensor(grid));
    const DecodedScore s = decode_score(a.curve);
    a.score = s.score;
    a.peak_height = s.peak_height;
    a.band_low = std::max(0, s.score - tolerance_steps);
    a.band_high = std::min(kMaxScore, s.score + tolerance_steps);
    return a;
}

Assessment assess(const Checkpoint& checkpoint, std::span<const std::uint8_t> mesh_file, SourceFormat format,
                  int tolerance_steps) {
    if (mesh_file.empty()) throw Error("empty model file");
    const GridDims in = checkpoint.arch.input;
    if (!in.cubic()) throw Error("assessment needs a single-part network with a cubic input");
    return assess_grid(checkpoint, voxelize(parse_mesh(mesh_file, format), in.x), tolerance_steps);
}

}  // namespace neurocad
