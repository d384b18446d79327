// neurocad: command-line front end. Data goes to stdout, diagnostics to
// stderr. Exit status 0 on success, 1 for bad input, 2 for internal errors.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "neurocad/augment.hpp"
#include "neurocad/dataset.hpp"
#include "neurocad/mesh.hpp"
#include "neurocad/service.hpp"
#include "neurocad/shapes.hpp"
#include "neurocad/trainer.hpp"
#include "neurocad/voxel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace neurocad;

namespace {

struct Options {
    bool json_output = false;
    int threads = 0;

    std::string in, out, data = "neurocad-data", plan, config, question, model, annotator, name, checkpoint, label_rule;
    std::vector<std::string> inputs;
    int resolution = 64;
    int score = -1;
    int count = 20;
    int port = -1;
    std::size_t eval_count = 20;
    std::uint64_t seed = 1;
    int epochs = 0;
    int batch_size = 0;
    double learning_rate = -1.0;
};

std::vector<std::uint8_t> read_input(const std::string& path) {
    if (!fs::exists(path)) throw Error("no such file '" + path + "'");
    return read_file(path);
}

SourceFormat mesh_format(const std::string& path) {
    const auto f = format_from_filename(path);
    if (!f) throw Error("'" + path + "' is neither .stl nor .obj");
    return *f;
}

void emit(const Options& o, const json& record, const std::string& text) {
    if (o.json_output) {
        std::cout << record.dump() << '\n';
    } else {
        std::cout << text << '\n';
    }
}

int cmd_voxelize(const Options& o) {
    const auto bytes = read_input(o.in);
    const VoxelGrid grid = voxelize(parse_mesh(bytes, mesh_format(o.in)), o.resolution);
    write_file_atomic(o.out, write_binvox(grid));
    emit(o, {{"out", o.out}, {"resolution", o.resolution}, {"occupied", grid.occupied_count()}},
         o.out + ": " + std::to_string(grid.occupied_count()) + " of " + std::to_string(grid.size()) + " cells occupied");
    return 0;
}

int cmd_augment(const Options& o) {
    const VoxelGrid grid = read_binvox(read_input(o.in));
    AugmentationPlan plan = AugmentationPlan::default_plan();
    if (!o.plan.empty()) {
        const auto text = read_input(o.plan);
        json j;
        try {
            j = json::parse(text.begin(), text.end());
        } catch (const json::exception& e) {
            throw Error("cannot parse plan '" + o.plan + "': " + e.what());
        }
        plan = plan_from_json(j);
    }
    plan.validate();
    fs::create_directories(o.out);
    std::size_t k = 0;
    for (std::size_t oi = 0; oi < plan.orientations.size(); ++oi) {
        for (std::size_t si = 0; si < plan.scale_factors.size(); ++si, ++k) {
            char file[64];
            std::snprintf(file, sizeof file, "invariant_o%02d_s%02zu.binvox", plan.orientations[oi], si);
            write_file_atomic(fs::path(o.out) / file, write_binvox(make_invariant(grid, plan, k)));
        }
    }
    emit(o, {{"out", o.out}, {"invariants", k}}, std::to_string(k) + " invariants written to " + o.out);
    return 0;
}

int cmd_ingest(const Options& o) {
    Dataset dataset(o.data);
    for (const auto& path : o.inputs) {
        const std::string id = dataset.ingest_model(read_input(path), mesh_format(path), o.resolution,
                                                    o.name.empty() ? fs::path(path).filename().string() : o.name);
        emit(o, {{"model_id", id}, {"file", path}}, id + "  " + path);
    }
    return 0;
}

int cmd_annotate(const Options& o) {
    Dataset dataset(o.data);
    const Annotation a = dataset.record_annotation(o.model, o.question, o.score, o.annotator);
    emit(o,
         {{"annotation_id", a.id}, {"model_id", a.model_id}, {"question_id", a.question_id}, {"score", a.score},
          {"annotator", a.annotator}, {"timestamp", a.timestamp}},
         "annotation " + std::to_string(a.id));
    return 0;
}

int cmd_split(const Options& o) {
    Dataset dataset(o.data);
    dataset.assign_splits(o.eval_count, o.seed);
    emit(o, {{"eval", o.eval_count}, {"train", dataset.snapshot()->models.size() - o.eval_count}, {"seed", o.seed}},
         std::to_string(o.eval_count) + " evaluation models, " +
             std::to_string(dataset.snapshot()->models.size() - o.eval_count) + " training models");
    return 0;
}

int cmd_generate(const Options& o) {
    if (o.label_rule != "slenderness") throw Error("unknown label rule '" + o.label_rule + "'");
    Dataset dataset(o.data);
    for (int i = 0; i < o.count; ++i) {
        const auto shape = shapes::random_shape(o.seed, static_cast<std::size_t>(i));
        const auto stl = write_stl(shape.mesh);
        const std::string id = dataset.ingest_model(stl, SourceFormat::stl_binary, o.resolution, shape.name);
        const int score = shapes::slenderness_score(dataset.load_grid(id));
        dataset.record_annotation(id, o.question, score, "rule:" + o.label_rule, "1970-01-01T00:00:00Z");
        emit(o, {{"model_id", id}, {"name", shape.name}, {"score", score}}, id + "  " + shape.name + "  " + std::to_string(score));
    }
    return 0;
}

int cmd_models(const Options& o) {
    Dataset dataset(o.data);
    const auto m = dataset.snapshot();
    for (const auto& e : m->models) {
        std::string labels;
        json annotations = json::array();
        for (const auto& a : m->annotations_for(e.id)) {
            annotations.push_back({{"question_id", a.question_id}, {"score", a.score}, {"annotator", a.annotator}});
            labels += " " + a.question_id + "=" + std::to_string(a.score);
        }
        emit(o,
             {{"model_id", e.id}, {"name", e.name}, {"resolution", e.resolution},
              {"split", std::string(to_string(m->split_of(e.id)))}, {"annotations", annotations}},
             e.id + "  " + std::string(to_string(m->split_of(e.id))) + "  " + e.name + labels);
    }
    return 0;
}

TrainingConfig training_config(const Options& o) {
    TrainingConfig c;
    if (!o.config.empty()) {
        const auto text = read_input(o.config);
        try {
            c = training_config_from_json(json::parse(text.begin(), text.end()));
        } catch (const json::exception& e) {
            throw Error("cannot parse config '" + o.config + "': " + e.what());
        }
    }
    if (!o.question.empty()) c.question_id = o.question;
    if (o.epochs > 0) c.epochs = o.epochs;
    if (o.batch_size > 0) c.batch_size = o.batch_size;
    if (o.learning_rate >= 0.0) c.learning_rate = o.learning_rate;
    if (o.threads > 0) c.threads = o.threads;
    c.validate();
    return c;
}

int cmd_train(const Options& o) {
    Dataset dataset(o.data);
    TrainingConfig config = training_config(o);
    if (config.checkpoint_path.empty()) config.checkpoint_path = dataset.checkpoint_path(config.question_id).string();
    const fs::path history_path = fs::path(config.checkpoint_path).replace_extension(".history.jsonl");

    std::string history;
    const TrainResult result = train(dataset, config, [&](const EpochRecord& e) {
        const json rec = {{"epoch", e.epoch},     {"steps", e.steps},
                          {"samples", e.samples}, {"mean_cost", e.mean_cost},
                          {"exact_accuracy", e.exact_accuracy}, {"tolerance_accuracy", e.tolerance_accuracy},
                          {"seed", config.seed}};
        history += rec.dump() + '\n';
        std::fprintf(stderr, "epoch %d  steps %llu  cost %.6f  exact %.1f%%  within %d %.1f%%\n", e.epoch,
                     static_cast<unsigned long long>(e.steps), e.mean_cost, 100.0 * e.exact_accuracy,
                     config.tolerance_steps, 100.0 * e.tolerance_accuracy);
    });
    write_file_atomic(history_path, history);
    const EpochRecord last = result.history.empty() ? EpochRecord{} : result.history.back();
    emit(o,
         {{"checkpoint", config.checkpoint_path}, {"history", history_path.string()}, {"steps", result.steps},
          {"epochs", last.epoch}, {"exact_accuracy", last.exact_accuracy}, {"diverged", result.diverged},
          {"seed", config.seed}},
         "checkpoint " + config.checkpoint_path + " after " + std::to_string(result.steps) + " steps");
    if (result.diverged) {
        std::cerr << "training diverged; the checkpoint holds the last finite parameters\n";
        return 1;
    }
    return 0;
}

Checkpoint load_checkpoint(const Options& o, const Dataset* dataset) {
    fs::path path = o.checkpoint;
    if (path.empty()) {
        if (!dataset || o.question.empty()) throw Error("pass --checkpoint, or --data and --question");
        path = dataset->checkpoint_path(o.question);
    }
    if (!fs::exists(path)) throw Error("no checkpoint at '" + path.string() + "'");
    return read_checkpoint(read_file(path));
}

int cmd_evaluate(const Options& o) {
    Dataset dataset(o.data);
    TrainingConfig config = training_config(o);
    const Checkpoint checkpoint = load_checkpoint(o, &dataset);
    if (const auto it = checkpoint.metadata.find("seed"); it != checkpoint.metadata.end()) {
        config.seed = std::stoull(it->second);
    }
    const EvaluationReport report = evaluate(checkpoint, dataset, config);
    if (!o.out.empty()) write_file_atomic(o.out, report_to_jsonl(report));
    if (o.json_output) {
        std::cout << report_to_jsonl(report);
    } else {
        std::cout << format_report_table(report);
    }
    if (report.rows.size() >= 3) {
        const ConfidenceRegression r = confidence_regression(report);
        emit(o,
             {{"record", "confidence"}, {"slope", r.slope}, {"intercept", r.intercept}, {"r_squared", r.r_squared},
              {"samples", r.samples}, {"degenerate", r.degenerate}},
             "confidence regression: slope " + std::to_string(r.slope) + "  intercept " + std::to_string(r.intercept) +
                 "  R^2 " + std::to_string(r.r_squared) + (r.degenerate ? "  (degenerate)" : ""));
    }
    return 0;
}

int cmd_assess(const Options& o) {
    std::optional<Dataset> dataset;
    if (o.checkpoint.empty()) dataset.emplace(o.data);
    const Checkpoint checkpoint = load_checkpoint(o, dataset ? &*dataset : nullptr);
    const Assessment a = assess(checkpoint, read_input(o.in), mesh_format(o.in));
    std::string curve;
    for (double v : a.curve) curve += " " + std::to_string(v).substr(0, 6);
    emit(o,
         {{"score", a.score}, {"peak_height", a.peak_height}, {"curve", a.curve}, {"band", {a.band_low, a.band_high}}},
         "score " + std::to_string(a.score) + " (band " + std::to_string(a.band_low) + ".." +
             std::to_string(a.band_high) + ")  peak " + std::to_string(a.peak_height) + "\ncurve" + curve);
    return 0;
}

Service* g_service = nullptr;

int cmd_serve(const Options& o) {
    ServiceConfig config = load_service_config(o.config);
    if (o.port >= 0) config.port = o.port;
    if (!o.data.empty() && o.data != "neurocad-data") config.data_dir = o.data;
    Service service(config);
    const int port = service.bind();
    g_service = &service;
    std::signal(SIGINT, [](int) {
        if (g_service) g_service->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_service) g_service->stop();
    });
    std::cerr << "listening on " << config.host << ":" << port << " (data " << config.data_dir.string() << ")\n";
    emit(o, {{"port", port}}, "port " + std::to_string(port));
    std::cout.flush();
    service.run();
    g_service = nullptr;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neurocad: voxelize CAD meshes, train and run automation-capability assessments"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_flag("--json", o.json_output, "Line-delimited JSON on stdout");
    app.add_option("--threads", o.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

    auto* voxelize_cmd = app.add_subcommand("voxelize", "Mesh file to binvox");
    voxelize_cmd->add_option("--in", o.in, "STL or OBJ file")->required();
    voxelize_cmd->add_option("--res", o.resolution, "Grid resolution (4..1024)")->capture_default_str();
    voxelize_cmd->add_option("--out", o.out, "Output .binvox")->required();

    auto* augment_cmd = app.add_subcommand("augment", "Write the rotated and scaled invariants of a binvox");
    augment_cmd->add_option("--in", o.in, "Input .binvox")->required();
    augment_cmd->add_option("--plan", o.plan, "Plan JSON {orientations, scale_factors}; default 24 x 5");
    augment_cmd->add_option("--out", o.out, "Output directory")->required();

    auto* ingest_cmd = app.add_subcommand("ingest", "Add mesh files to a data directory");
    ingest_cmd->add_option("--data", o.data, "Data directory")->capture_default_str();
    ingest_cmd->add_option("--in", o.inputs, "STL or OBJ files")->required();
    ingest_cmd->add_option("--res", o.resolution, "Grid resolution")->capture_default_str();
    ingest_cmd->add_option("--name", o.name, "Display name (default: file name)");

    auto* annotate_cmd = app.add_subcommand("annotate", "Record an expert score");
    annotate_cmd->add_option("--data", o.data, "Data directory")->capture_default_str();
    annotate_cmd->add_option("--model", o.model, "Model id")->required();
    annotate_cmd->add_option("--question", o.question, "Question id")->required();
    annotate_cmd->add_option("--score", o.score, "Score 0..10")->required();
    annotate_cmd->add_option("--annotator", o.annotator, "Annotator name")->required();

    auto* split_cmd = app.add_subcommand("split", "Randomly hold out evaluation models");
    split_cmd->add_option("--data", o.data, "Data directory")->capture_default_str();
    split_cmd->add_option("--eval", o.eval_count, "Number of evaluation models")->capture_default_str();
    split_cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();

    auto* generate_cmd = app.add_subcommand("generate", "Ingest procedural shapes labelled by a geometric rule");
    generate_cmd->add_option("--data", o.data, "Data directory")->capture_default_str();
    generate_cmd->add_option("--count", o.count, "Number of shapes")->capture_default_str();
    generate_cmd->add_option("--res", o.resolution, "Grid resolution")->capture_default_str();
    generate_cmd->add_option("--seed", o.seed, "Shape seed")->capture_default_str();
    generate_cmd->add_option("--question", o.question, "Question id the labels answer")->required();
    o.label_rule = "slenderness";
    generate_cmd->add_option("--rule", o.label_rule, "Label rule (slenderness)")->capture_default_str();

    auto* models_cmd = app.add_subcommand("models", "List models with split and annotations");
    models_cmd->add_option("--data", o.data, "Data directory")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "Train the network for one question");
    train_cmd->add_option("--data", o.data, "Data directory")->capture_default_str();
    train_cmd->add_option("--question", o.question, "Question id");
    train_cmd->add_option("--config", o.config, "Training config JSON");
    train_cmd->add_option("--epochs", o.epochs, "Override epochs");
    train_cmd->add_option("--batch-size", o.batch_size, "Override batch size");
    train_cmd->add_option("--learning-rate", o.learning_rate, "Override learning rate");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score the evaluation split");
    evaluate_cmd->add_option("--data", o.data, "Data directory")->capture_default_str();
    evaluate_cmd->add_option("--question", o.question, "Question id");
    evaluate_cmd->add_option("--config", o.config, "Training config JSON (tolerance, aggregation)");
    evaluate_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint (default: the data directory's)");
    evaluate_cmd->add_option("--out", o.out, "Also write the report as JSON lines");

    auto* assess_cmd = app.add_subcommand("assess", "Assess one mesh file");
    assess_cmd->add_option("--in", o.in, "STL or OBJ file")->required();
    assess_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
    assess_cmd->add_option("--data", o.data, "Data directory")->capture_default_str();
    assess_cmd->add_option("--question", o.question, "Question id");

    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP API");
    serve_cmd->add_option("--config", o.config, "Service config JSON");
    serve_cmd->add_option("--port", o.port, "Port (0 picks a free one)");
    serve_cmd->add_option("--data", o.data, "Data directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

#ifdef _OPENMP
    if (o.threads > 0) omp_set_num_threads(o.threads);
#endif

    try {
        if (*voxelize_cmd) return cmd_voxelize(o);
        if (*augment_cmd) return cmd_augment(o);
        if (*ingest_cmd) return cmd_ingest(o);
        if (*annotate_cmd) return cmd_annotate(o);
        if (*split_cmd) return cmd_split(o);
        if (*generate_cmd) return cmd_generate(o);
        if (*models_cmd) return cmd_models(o);
        if (*train_cmd) return cmd_train(o);
        if (*evaluate_cmd) return cmd_evaluate(o);
        if (*assess_cmd) return cmd_assess(o);
        if (*serve_cmd) return cmd_serve(o);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
