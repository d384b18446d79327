#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

namespace neurocad {

struct Question {
    std::string id;
    std::string text;
    std::string low_label;   // meaning of score 0
    std::string mid_label;   // meaning of score 5
    std::string high_label;  // meaning of score 10
};

/// separability, gripping_surfaces, self_centering.
std::vector<Question> default_question_catalog();

struct ApiToken {
    std::string token;
    std::string annotator;
    std::int64_t expires_at = 0;  // unix seconds; 0 never expires
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path data_dir = "neurocad-data";
    std::vector<ApiToken> tokens;
    std::vector<Question> questions = default_question_catalog();
    std::size_t max_upload_bytes = 64u << 20;
    int default_resolution = 64;
    int max_resolution = 256;
    int tolerance_steps = 2;
    std::filesystem::path static_dir;  // UI assets served at / when set
};

nlohmann::json to_json(const ServiceConfig& config);
ServiceConfig service_config_from_json(const nlohmann::json& j);

/// "token:annotator[:expires_at]" entries separated by commas.
std::vector<ApiToken> parse_token_list(const std::string& text);

/// NEUROCAD_PORT, NEUROCAD_DATA_DIR and NEUROCAD_TOKENS override the file.
/// `getenv` is injectable for tests.
void apply_env_overrides(ServiceConfig& config,
                         const std::function<const char*(const char*)>& getenv = [](const char* k) { return std::getenv(k); });

/// Reads the config file if the path is non-empty, then applies overrides.
ServiceConfig load_service_config(const std::filesystem::path& path);

/// The HTTP API over one data directory. Handlers run concurrently; dataset
/// writes go through the Dataset's single writer and checkpoints are shared
/// read-only.
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds to config.port (0 picks a free port) and returns the bound port.
    int bind();
    /// Serves until stop(); call bind() first.
    void run();
    void stop();
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace neurocad
