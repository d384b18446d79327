#include "neurocad/service.hpp"

#include <chrono>
#include <map>
#include <mutex>

#include <httplib.h>

#include "neurocad/dataset.hpp"
#include "neurocad/error.hpp"
#include "neurocad/labels.hpp"
#include "neurocad/trainer.hpp"
#include "neurocad/voxel.hpp"

namespace neurocad {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<Question> default_question_catalog() {
    return {
        {"separability", "How easily can the part be isolated from bulk supply?", "easy", "difficult",
         "not separable at all"},
        {"gripping_surfaces", "Does the part offer surfaces suitable for gripping?", "easy", "difficult",
         "not grippable at all"},
        {"self_centering", "Does the part align itself while the handling device closes?", "easy", "difficult",
         "does not self-center at all"},
    };
}

namespace {

json question_json(const Question& q) {
    return {{"id", q.id},
            {"text", q.text},
            {"scale", {{"min", 0}, {"max", kMaxScore}, {"anchors", {{"0", q.low_label}, {"5", q.mid_label}, {"10", q.high_label}}}}}};
}

}  // namespace

json to_json(const ServiceConfig& c) {
    json tokens = json::array();
    for (const auto& t : c.tokens) tokens.push_back({{"token", t.token}, {"annotator", t.annotator}, {"expires_at", t.expires_at}});
    json questions = json::array();
    for (const auto& q : c.questions) {
        questions.push_back({{"id", q.id}, {"text", q.text}, {"low", q.low_label}, {"mid", q.mid_label}, {"high", q.high_label}});
    }
    return {{"host", c.host},
            {"port", c.port},
            {"data_dir", c.data_dir.string()},
            {"tokens", tokens},
            {"questions", questions},
            {"max_upload_bytes", c.max_upload_bytes},
            {"default_resolution", c.default_resolution},
            {"max_resolution", c.max_resolution},
            {"tolerance_steps", c.tolerance_steps},
            {"static_dir", c.static_dir.string()}};
}

ServiceConfig service_config_from_json(const json& j) {
    if (!j.is_object()) throw Error("service config must be a JSON object");
    ServiceConfig c;
    try {
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        c.data_dir = j.value("data_dir", c.data_dir.string());
        if (j.contains("tokens")) {
            for (const auto& t : j.at("tokens")) {
                c.tokens.push_back({t.at("token").get<std::string>(), t.at("annotator").get<std::string>(),
                                    t.value("expires_at", std::int64_t{0})});
            }
        }
        if (j.contains("questions")) {
            c.questions.clear();
            for (const auto& q : j.at("questions")) {
                c.questions.push_back({q.at("id").get<std::string>(), q.value("text", std::string{}),
                                       q.value("low", std::string{}), q.value("mid", std::string{}),
                                       q.value("high", std::string{})});
            }
        }
        c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
        c.default_resolution = j.value("default_resolution", c.default_resolution);
        c.max_resolution = j.value("max_resolution", c.max_resolution);
        c.tolerance_steps = j.value("tolerance_steps", c.tolerance_steps);
        c.static_dir = j.value("static_dir", std::string{});
    } catch (const json::exception& e) {
        throw Error(std::string("bad service config: ") + e.what());
    }
    if (c.port < 0 || c.port > 65535) throw Error("port outside [0, 65535]");
    if (c.default_resolution < kMinVoxelResolution || c.default_resolution > c.max_resolution ||
        c.max_resolution > kMaxGridDim) {
        throw Error("default resolution must lie within [4, max_resolution] and max_resolution within 1024");
    }
    for (const auto& t : c.tokens) {
        if (t.token.empty() || t.annotator.empty()) throw Error("tokens need a token and an annotator");
    }
    return c;
}

std::vector<ApiToken> parse_token_list(const std::string& text) {
    std::vector<ApiToken> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find(',', pos), text.size());
        const std::string entry = text.substr(pos, end - pos);
        pos = end + 1;
        if (entry.empty()) continue;
        const auto c1 = entry.find(':');
        if (c1 == std::string::npos || c1 == 0 || c1 + 1 == entry.size()) {
            throw Error("token entry '" + entry + "' is not token:annotator[:expires_at]");
        }
        ApiToken t;
        t.token = entry.substr(0, c1);
        const auto c2 = entry.find(':', c1 + 1);
        t.annotator = entry.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1);
        if (c2 != std::string::npos) {
            try {
                std::size_t used = 0;
                t.expires_at = std::stoll(entry.substr(c2 + 1), &used);
                if (used != entry.size() - c2 - 1) throw Error("");
            } catch (const std::exception&) {
                throw Error("token entry '" + entry + "' has a bad expiry");
            }
        }
        if (t.annotator.empty()) throw Error("token entry '" + entry + "' lacks an annotator");
        out.push_back(std::move(t));
    }
    return out;
}

void apply_env_overrides(ServiceConfig& config, const std::function<const char*(const char*)>& getenv) {
    if (const char* port = getenv("NEUROCAD_PORT")) {
        try {
            std::size_t used = 0;
            const int p = std::stoi(port, &used);
            if (used != std::string(port).size() || p < 0 || p > 65535) throw Error("");
            config.port = p;
        } catch (const std::exception&) {
            throw Error(std::string("NEUROCAD_PORT '") + port + "' is not a port number");
        }
    }
    if (const char* dir = getenv("NEUROCAD_DATA_DIR")) config.data_dir = dir;
    if (const char* tokens = getenv("NEUROCAD_TOKENS")) config.tokens = parse_token_list(tokens);
}

ServiceConfig load_service_config(const fs::path& path) {
    ServiceConfig config;
    if (!path.empty()) {
        const auto bytes = read_file(path);
        json j;
        try {
            j = json::parse(bytes.begin(), bytes.end());
        } catch (const json::exception& e) {
            throw Error("cannot parse service config '" + path.string() + "': " + e.what());
        }
        config = service_config_from_json(j);
    }
    apply_env_overrides(config);
    return config;
}

// ---------------------------------------------------------------------------

struct Service::Impl {
    ServiceConfig config;
    Dataset dataset;
    httplib::Server server;
    int bound_port = -1;

    std::mutex checkpoint_mutex;
    struct CachedCheckpoint {
        fs::file_time_type mtime;
        std::shared_ptr<const Checkpoint> checkpoint;
    };
    std::map<std::string, CachedCheckpoint> checkpoints;

    explicit Impl(ServiceConfig c) : config(std::move(c)), dataset(config.data_dir) { routes(); }

    static void send_json(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& message, json extra = json::object()) {
        extra["error"] = message;
        send_json(res, status, extra);
    }

    // Returns the annotator for a valid bearer token, or sends 401.
    std::optional<std::string> authenticate(const httplib::Request& req, httplib::Response& res) const {
        const std::string header = req.get_header_value("Authorization");
        static const std::string kPrefix = "Bearer ";
        if (header.rfind(kPrefix, 0) == 0) {
            const std::string token = header.substr(kPrefix.size());
            const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                                 std::chrono::system_clock::now().time_since_epoch())
                                 .count();
            for (const auto& t : config.tokens) {
                if (t.token != token) continue;
                if (t.expires_at != 0 && now >= t.expires_at) {
                    res.set_header("WWW-Authenticate", "Bearer error=\"invalid_token\"");
                    send_error(res, 401, "token expired");
                    return std::nullopt;
                }
                return t.annotator;
            }
        }
        res.set_header("WWW-Authenticate", "Bearer");
        send_error(res, 401, "missing or invalid bearer token");
        return std::nullopt;
    }

    const Question* find_question(const std::string& id) const {
        for (const auto& q : config.questions) {
            if (q.id == id) return &q;
        }
        return nullptr;
    }

    std::shared_ptr<const Checkpoint> checkpoint_for(const std::string& question_id) {
        const fs::path path = dataset.checkpoint_path(question_id);
        std::error_code ec;
        const auto mtime = fs::last_write_time(path, ec);
        if (ec) return nullptr;
        std::lock_guard lock(checkpoint_mutex);
        auto it = checkpoints.find(question_id);
        if (it != checkpoints.end() && it->second.mtime == mtime) return it->second.checkpoint;
        auto loaded = std::make_shared<const Checkpoint>(read_checkpoint(read_file(path)));
        checkpoints[question_id] = {mtime, loaded};
        return loaded;
    }

    static json model_json(const DatasetManifest& m, const ModelEntry& e) {
        return {{"model_id", e.id},
                {"name", e.name},
                {"source_format", e.source_format},
                {"source_hash", e.source_hash},
                {"resolution", e.resolution},
                {"split", std::string(to_string(m.split_of(e.id)))}};
    }

    static json annotation_json(const Annotation& a) {
        return {{"annotation_id", a.id},
                {"model_id", a.model_id},
                {"question_id", a.question_id},
                {"score", a.score},
                {"annotator", a.annotator},
                {"timestamp", a.timestamp}};
    }

    static std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
        try {
            json j = json::parse(req.body);
            if (!j.is_object()) throw Error("");
            return j;
        } catch (const std::exception&) {
            send_error(res, 400, "request body must be a JSON object");
            return std::nullopt;
        }
    }

    void post_model(const httplib::Request& req, httplib::Response& res) {
        const auto annotator = authenticate(req, res);
        if (!annotator) return;
        if (!req.is_multipart_form_data() || !req.has_file("file")) {
            send_error(res, 400, "expected multipart/form-data with a 'file' part");
            return;
        }
        const auto file = req.get_file_value("file");
        if (file.content.size() > config.max_upload_bytes) {
            send_error(res, 413, "upload exceeds " + std::to_string(config.max_upload_bytes) + " bytes");
            return;
        }

        int resolution = config.default_resolution;
        if (req.has_file("resolution")) {
            try {
                std::size_t used = 0;
                const std::string text = req.get_file_value("resolution").content;
                resolution = std::stoi(text, &used);
                if (used != text.size()) throw Error("");
            } catch (const std::exception&) {
                send_error(res, 400, "resolution must be an integer");
                return;
            }
        }
        if (resolution < kMinVoxelResolution || resolution > config.max_resolution) {
            send_error(res, 400, "resolution must lie within [" + std::to_string(kMinVoxelResolution) + ", " +
                                     std::to_string(config.max_resolution) + "]");
            return;
        }

        std::optional<SourceFormat> format;
        if (req.has_file("format")) {
            const std::string f = req.get_file_value("format").content;
            if (f == "stl") format = SourceFormat::stl_binary;
            else if (f == "obj") format = SourceFormat::obj;
        } else {
            format = format_from_filename(file.filename);
        }
        if (!format) {
            send_error(res, 400, "cannot tell the mesh format; use a .stl or .obj file name or a 'format' part");
            return;
        }

        std::string name = req.has_file("name") ? req.get_file_value("name").content : file.filename;
        try {
            const auto bytes = std::span(reinterpret_cast<const std::uint8_t*>(file.content.data()), file.content.size());
            const std::string id = dataset.ingest_model(bytes, *format, resolution, std::move(name));
            const auto m = dataset.snapshot();
            send_json(res, 200, model_json(*m, *m->find_model(id)));
        } catch (const ParseError& e) {
            send_error(res, 400, e.what(),
                       {{"position", e.position()}, {"unit", e.unit() == ParseError::Unit::byte ? "byte" : "line"}});
        } catch (const Error& e) {
            send_error(res, 400, e.what());
        }
    }

    void get_voxels(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto m = dataset.snapshot();
        const ModelEntry* entry = m->find_model(id);
        if (!entry) {
            send_error(res, 404, "unknown model '" + id + "'");
            return;
        }
        VoxelGrid grid = dataset.load_grid(id);
        const GridDims native = grid.dims();
        int lod = std::max({native.x, native.y, native.z});
        if (req.has_param("lod")) {
            try {
                std::size_t used = 0;
                const std::string text = req.get_param_value("lod");
                lod = std::stoi(text, &used);
                if (used != text.size() || lod <= 0) throw Error("");
            } catch (const std::exception&) {
                send_error(res, 400, "lod must be a positive integer");
                return;
            }
        }
        grid = downsample_any(grid, lod);
        const GridDims d = grid.dims();
        json coords = json::array();
        for (const auto& c : occupied_coordinates(grid)) coords.push_back({c[0], c[1], c[2]});
        send_json(res, 200,
                  {{"model_id", id},
                   {"dim", {d.x, d.y, d.z}},
                   {"native_dim", {native.x, native.y, native.z}},
                   {"count", coords.size()},
                   {"coordinates", std::move(coords)},
                   {"transform",
                    {{"translate", {grid.translate.x, grid.translate.y, grid.translate.z}},
                     {"scale", grid.scale},
                     {"cell_size", grid.scale / d.x}}}});
    }

    void post_annotation(const httplib::Request& req, httplib::Response& res) {
        const auto annotator = authenticate(req, res);
        if (!annotator) return;
        const auto body = parse_body(req, res);
        if (!body) return;
        const auto model_id = body->find("model_id");
        const auto question_id = body->find("question_id");
        const auto score = body->find("score");
        if (model_id == body->end() || !model_id->is_string() || question_id == body->end() ||
            !question_id->is_string() || score == body->end() || !score->is_number()) {
            send_error(res, 400, "body needs string model_id, string question_id and numeric score");
            return;
        }
        const std::int64_t value = score->is_number_integer() ? score->get<std::int64_t>() : -1;
        if (value < 0 || value > kMaxScore) {
            send_error(res, 422, "score must be an integer in [0, 10]");
            return;
        }
        if (!find_question(question_id->get<std::string>())) {
            send_error(res, 422, "unknown question '" + question_id->get<std::string>() + "'");
            return;
        }
        if (!dataset.snapshot()->find_model(model_id->get<std::string>())) {
            send_error(res, 404, "unknown model '" + model_id->get<std::string>() + "'");
            return;
        }
        try {
            const Annotation a = dataset.record_annotation(model_id->get<std::string>(), question_id->get<std::string>(),
                                                           static_cast<int>(value), *annotator);
            send_json(res, 200, annotation_json(a));
        } catch (const Error& e) {
            // The model can only vanish if the data directory is edited underneath us.
            send_error(res, 404, e.what());
        }
    }

    void get_annotations(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto m = dataset.snapshot();
        if (!m->find_model(id)) {
            send_error(res, 404, "unknown model '" + id + "'");
            return;
        }
        json list = json::array();
        for (const auto& a : m->annotations_for(id)) list.push_back(annotation_json(a));
        send_json(res, 200, {{"model_id", id}, {"annotations", std::move(list)}});
    }

    void post_assess(const httplib::Request& req, httplib::Response& res) {
        const auto annotator = authenticate(req, res);
        if (!annotator) return;
        const auto body = parse_body(req, res);
        if (!body) return;
        const auto model_id = body->find("model_id");
        const auto question_id = body->find("question_id");
        if (model_id == body->end() || !model_id->is_string() || question_id == body->end() ||
            !question_id->is_string()) {
            send_error(res, 400, "body needs string model_id and question_id");
            return;
        }
        const std::string id = model_id->get<std::string>();
        const std::string question = question_id->get<std::string>();
        if (!dataset.snapshot()->find_model(id)) {
            send_error(res, 404, "unknown model '" + id + "'");
            return;
        }
        std::shared_ptr<const Checkpoint> checkpoint;
        try {
            checkpoint = checkpoint_for(question);
        } catch (const Error& e) {
            send_error(res, 409, std::string("checkpoint for '") + question + "' is unreadable: " + e.what());
            return;
        }
        if (!checkpoint) {
            send_error(res, 409, "no trained network for question '" + question + "'");
            return;
        }
        const VoxelGrid grid = dataset.load_grid(id);
        if (grid.dims() != checkpoint->arch.input) {
            const GridDims in = checkpoint->arch.input;
            send_error(res, 409, "network for '" + question + "' expects " + std::to_string(in.x) + "^3 voxels; model " +
                                     id + " is stored at " + std::to_string(grid.dims().x) + "^3");
            return;
        }
        const Assessment a = assess_grid(*checkpoint, grid, config.tolerance_steps);
        send_json(res, 200,
                  {{"model_id", id},
                   {"question_id", question},
                   {"score", a.score},
                   {"peak_height", a.peak_height},
                   {"curve", a.curve},
                   {"band", {a.band_low, a.band_high}}});
    }

    void routes() {
        server.set_payload_max_length(config.max_upload_bytes + (64u << 10));
        server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
            std::string message = "internal error";
            try {
                std::rethrow_exception(ep);
            } catch (const std::exception& e) {
                message = e.what();
            } catch (...) {
            }
            send_error(res, 500, message);
        });

        server.Get("/api/questions", [this](const httplib::Request&, httplib::Response& res) {
            json list = json::array();
            for (const auto& q : config.questions) list.push_back(question_json(q));
            send_json(res, 200, {{"questions", std::move(list)}});
        });
        server.Get("/api/models", [this](const httplib::Request&, httplib::Response& res) {
            const auto m = dataset.snapshot();
            json list = json::array();
            for (const auto& e : m->models) list.push_back(model_json(*m, e));
            send_json(res, 200, {{"models", std::move(list)}});
        });
        server.Post("/api/models", [this](const httplib::Request& req, httplib::Response& res) { post_model(req, res); });
        server.Get(R"(/api/models/([0-9a-f]+)/voxels)",
                   [this](const httplib::Request& req, httplib::Response& res) { get_voxels(req, res); });
        server.Get(R"(/api/models/([0-9a-f]+)/annotations)",
                   [this](const httplib::Request& req, httplib::Response& res) { get_annotations(req, res); });
        server.Post("/api/annotations",
                    [this](const httplib::Request& req, httplib::Response& res) { post_annotation(req, res); });
        server.Post("/api/assess", [this](const httplib::Request& req, httplib::Response& res) { post_assess(req, res); });

        if (!config.static_dir.empty()) server.set_mount_point("/", config.static_dir.string());
    }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

int Service::bind() {
    const int port = impl_->config.port == 0 ? impl_->server.bind_to_any_port(impl_->config.host)
                                             : (impl_->server.bind_to_port(impl_->config.host, impl_->config.port)
                                                    ? impl_->config.port
                                                    : -1);
    if (port < 0) {
        throw Error("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
    }
    impl_->bound_port = port;
    return port;
}

void Service::run() {
    if (impl_->bound_port < 0) bind();
    impl_->server.listen_after_bind();
}

void Service::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

int Service::port() const { return impl_->bound_port; }

}  // namespace neurocad
