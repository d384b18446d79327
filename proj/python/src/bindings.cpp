#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "neurocad/shapes.hpp"
#include "neurocad/trainer.hpp"

namespace py = pybind11;
using namespace neurocad;

namespace {

std::span<const std::uint8_t> as_span(const py::bytes& b) {
    const std::string_view v(b);
    return {reinterpret_cast<const std::uint8_t*>(v.data()), v.size()};
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
    return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

SourceFormat format_of(const std::string& name) {
    if (name == "stl") return SourceFormat::stl_binary;
    if (name == "obj") return SourceFormat::obj;
    throw Error("format must be 'stl' or 'obj', got '" + name + "'");
}

// Occupancy as a bool array indexed [x, y, z].
py::array_t<bool> grid_to_array(const VoxelGrid& g) {
    const GridDims d = g.dims();
    py::array_t<bool> out({d.x, d.y, d.z});
    auto a = out.mutable_unchecked<3>();
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) a(x, y, z) = g.at(x, y, z);
    return out;
}

VoxelGrid array_to_grid(const py::array_t<bool, py::array::forcecast>& array, std::array<double, 3> translate,
                        double scale) {
    if (array.ndim() != 3) throw Error("occupancy array must be three-dimensional");
    const auto a = array.unchecked<3>();
    VoxelGrid g({static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))},
                {translate[0], translate[1], translate[2]}, scale);
    for (py::ssize_t z = 0; z < a.shape(2); ++z)
        for (py::ssize_t y = 0; y < a.shape(1); ++y)
            for (py::ssize_t x = 0; x < a.shape(0); ++x) g.set(int(x), int(y), int(z), a(x, y, z));
    return g;
}

py::dict report_dict(const EvaluationReport& r) {
    py::list rows;
    for (const auto& row : r.rows) {
        rows.append(py::dict(py::arg("model_id") = row.model_id, py::arg("expected") = row.expected,
                             py::arg("predicted") = row.predicted, py::arg("peak_height") = row.peak_height,
                             py::arg("within_tolerance") = row.within_tolerance));
    }
    return py::dict(py::arg("rows") = rows, py::arg("accuracy_2step") = r.accuracy_2step,
                    py::arg("accuracy_1step") = r.accuracy_1step, py::arg("exact_accuracy") = r.exact_accuracy,
                    py::arg("max_error") = r.max_error);
}

TrainingConfig config_from(const py::dict& d) {
    const auto json_module = py::module_::import("json");
    return training_config_from_json(nlohmann::json::parse(json_module.attr("dumps")(d).cast<std::string>()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Voxel-based CNN assessment of CAD models";

    // Registered base first: pybind11 tries the most recent translator first.
    const auto base = py::register_exception<Error>(m, "NeurocadError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", base);

    m.def(
        "voxelize",
        [](const py::bytes& mesh, const std::string& format, int resolution) {
            return grid_to_array(voxelize(parse_mesh(as_span(mesh), format_of(format)), resolution));
        },
        py::arg("mesh"), py::arg("format") = "stl", py::arg("resolution") = 64,
        "Solid occupancy of an STL or OBJ file's bytes, indexed [x, y, z].");

    m.def(
        "write_binvox",
        [](const py::array_t<bool, py::array::forcecast>& occupancy, std::array<double, 3> translate, double scale) {
            return to_bytes(write_binvox(array_to_grid(occupancy, translate, scale)));
        },
        py::arg("occupancy"), py::arg("translate") = std::array<double, 3>{0, 0, 0}, py::arg("scale") = 1.0);
    m.def(
        "read_binvox",
        [](const py::bytes& data) {
            const VoxelGrid g = read_binvox(as_span(data));
            return py::make_tuple(grid_to_array(g), std::array<double, 3>{g.translate.x, g.translate.y, g.translate.z},
                                  g.scale);
        },
        py::arg("data"), "Returns (occupancy, translate, scale).");

    m.def(
        "invariants",
        [](const py::array_t<bool, py::array::forcecast>& occupancy, std::vector<int> orientations,
           std::vector<double> scale_factors) {
            AugmentationPlan plan = AugmentationPlan::default_plan();
            if (!orientations.empty()) plan.orientations = std::move(orientations);
            if (!scale_factors.empty()) plan.scale_factors = std::move(scale_factors);
            plan.validate();
            py::list out;
            for (const auto& g : generate_invariants(array_to_grid(occupancy, {0, 0, 0}, 1.0), plan)) out.append(grid_to_array(g));
            return out;
        },
        py::arg("occupancy"), py::arg("orientations") = std::vector<int>{}, py::arg("scale_factors") = std::vector<double>{},
        "Rotated and shrunk copies, orientation-major; empty lists select the default plan's.");

    m.def(
        "encode_score", [](int a) { return encode_score(Score(a)); }, py::arg("score"));
    m.def(
        "decode_score",
        [](const ScoreCurve& c) {
            const DecodedScore d = decode_score(c);
            return py::make_tuple(d.score, d.peak_height);
        },
        py::arg("curve"), "Returns (score, peak_height).");
    m.def("cost", &cost, py::arg("expected"), py::arg("predicted"));
    m.def(
        "fit_line",
        [](const std::vector<double>& x, const std::vector<double>& y) {
            const ConfidenceRegression r = fit_line(x, y);
            return py::dict(py::arg("slope") = r.slope, py::arg("intercept") = r.intercept,
                            py::arg("r_squared") = r.r_squared, py::arg("samples") = r.samples,
                            py::arg("degenerate") = r.degenerate);
        },
        py::arg("x"), py::arg("y"));

    m.def(
        "network_layout",
        [](int resolution) {
            py::list layers;
            for (const auto& l : build_single_part_net(resolution).layers) {
                layers.append(py::make_tuple(std::string(to_string(l.kind)), l.filters, l.output_shape));
            }
            return layers;
        },
        py::arg("resolution") = 64, "(kind, filters, output_shape) per layer of the single-part network.");
    m.def(
        "parameter_count", [](int resolution) { return build_single_part_net(resolution).parameter_count(); },
        py::arg("resolution") = 64);

    m.def(
        "procedural_stl",
        [](std::uint64_t seed, std::size_t index) {
            const auto s = shapes::random_shape(seed, index);
            return py::make_tuple(s.name, to_bytes(write_stl(s.mesh)));
        },
        py::arg("seed"), py::arg("index"), "A deterministic synthetic part as (name, binary STL bytes).");
    m.def(
        "slenderness_score", [](const py::array_t<bool, py::array::forcecast>& occupancy) {
            return shapes::slenderness_score(array_to_grid(occupancy, {0, 0, 0}, 1.0));
        },
        py::arg("occupancy"));

    py::class_<Dataset>(m, "Dataset")
        .def(py::init<std::filesystem::path>(), py::arg("root"))
        .def(
            "ingest",
            [](Dataset& ds, const py::bytes& mesh, const std::string& format, int resolution, const std::string& name) {
                const auto bytes = as_span(mesh);
                py::gil_scoped_release release;
                return ds.ingest_model(bytes, format_of(format), resolution, name);
            },
            py::arg("mesh"), py::arg("format") = "stl", py::arg("resolution") = 64, py::arg("name") = "")
        .def(
            "annotate",
            [](Dataset& ds, const std::string& model, const std::string& question, int score, const std::string& annotator) {
                return ds.record_annotation(model, question, score, annotator).id;
            },
            py::arg("model_id"), py::arg("question_id"), py::arg("score"), py::arg("annotator"))
        .def("assign_splits", &Dataset::assign_splits, py::arg("eval_count"), py::arg("seed"))
        .def(
            "set_plan",
            [](Dataset& ds, std::vector<int> orientations, std::vector<double> scale_factors) {
                ds.set_plan(AugmentationPlan{std::move(orientations), std::move(scale_factors)});
            },
            py::arg("orientations"), py::arg("scale_factors"))
        .def("models",
             [](const Dataset& ds) {
                 const auto m = ds.snapshot();
                 py::list out;
                 for (const auto& e : m->models) {
                     out.append(py::dict(py::arg("model_id") = e.id, py::arg("name") = e.name,
                                         py::arg("resolution") = e.resolution,
                                         py::arg("split") = std::string(to_string(m->split_of(e.id)))));
                 }
                 return out;
             })
        .def("labels",
             [](const Dataset& ds, const std::string& question, const std::string& aggregation) {
                 return ds.snapshot()->labels(question, aggregation_from_string(aggregation));
             },
             py::arg("question_id"), py::arg("aggregation") = "most_recent")
        .def("occupancy", [](const Dataset& ds, const std::string& id) { return grid_to_array(ds.load_grid(id)); },
             py::arg("model_id"))
        .def("checkpoint_path", &Dataset::checkpoint_path, py::arg("question_id"));

    m.def(
        "train",
        [](const Dataset& ds, const py::dict& config) {
            TrainingConfig c = config_from(config);
            if (c.checkpoint_path.empty()) c.checkpoint_path = ds.checkpoint_path(c.question_id).string();
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(ds, c);
            }
            py::list history;
            for (const auto& h : r.history) {
                history.append(py::dict(py::arg("epoch") = h.epoch, py::arg("steps") = h.steps,
                                        py::arg("mean_cost") = h.mean_cost, py::arg("exact_accuracy") = h.exact_accuracy,
                                        py::arg("tolerance_accuracy") = h.tolerance_accuracy));
            }
            return py::dict(py::arg("history") = history, py::arg("steps") = r.steps, py::arg("diverged") = r.diverged,
                            py::arg("checkpoint") = c.checkpoint_path);
        },
        py::arg("dataset"), py::arg("config"), "Trains one question; config keys as in the training config JSON.");
    m.def(
        "evaluate",
        [](const Dataset& ds, const std::filesystem::path& checkpoint, const py::dict& config) {
            return report_dict(evaluate(read_checkpoint(read_file(checkpoint)), ds, config_from(config)));
        },
        py::arg("dataset"), py::arg("checkpoint"), py::arg("config") = py::dict());
    m.def(
        "assess",
        [](const std::filesystem::path& checkpoint, const py::bytes& mesh, const std::string& format, int tolerance) {
            const Assessment a = assess(read_checkpoint(read_file(checkpoint)), as_span(mesh), format_of(format), tolerance);
            return py::dict(py::arg("score") = a.score, py::arg("peak_height") = a.peak_height, py::arg("curve") = a.curve,
                            py::arg("band") = py::make_tuple(a.band_low, a.band_high));
        },
        py::arg("checkpoint"), py::arg("mesh"), py::arg("format") = "stl", py::arg("tolerance_steps") = 2);
}
