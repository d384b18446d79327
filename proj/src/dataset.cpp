#include "neurocad/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <random>
#include <set>

#include <openssl/evp.h>
#include <json.hpp>

#include "neurocad/labels.hpp"

namespace neurocad {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split split) { return split == Split::train ? "train" : "eval"; }

std::string_view to_string(Aggregation aggregation) {
    return aggregation == Aggregation::most_recent ? "most_recent" : "median";
}

Aggregation aggregation_from_string(std::string_view s) {
    if (s == "most_recent") return Aggregation::most_recent;
    if (s == "median") return Aggregation::median;
    throw Error("unknown label aggregation '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Manifest

const ModelEntry* DatasetManifest::find_model(std::string_view id) const {
    const auto it = std::find_if(models.begin(), models.end(), [&](const ModelEntry& m) { return m.id == id; });
    return it == models.end() ? nullptr : &*it;
}

Split DatasetManifest::split_of(std::string_view model_id) const {
    const auto it = splits.find(std::string(model_id));
    return it == splits.end() ? Split::train : it->second;
}

std::vector<Annotation> DatasetManifest::annotations_for(std::string_view model_id) const {
    std::vector<Annotation> out;
    for (const auto& a : annotations) {
        if (a.model_id == model_id) out.push_back(a);
    }
    return out;
}

std::map<std::string, int> DatasetManifest::labels(std::string_view question_id, Aggregation aggregation) const {
    // model -> annotator -> latest annotation (annotation ids grow with time)
    std::map<std::string, std::map<std::string, const Annotation*>> latest;
    for (const auto& a : annotations) {
        if (a.question_id != question_id) continue;
        const Annotation*& slot = latest[a.model_id][a.annotator];
        if (!slot || a.id > slot->id) slot = &a;
    }
    std::map<std::string, int> out;
    for (const auto& [model, per_annotator] : latest) {
        std::vector<const Annotation*> answers;
        for (const auto& [annotator, a] : per_annotator) answers.push_back(a);
        if (aggregation == Aggregation::most_recent) {
            out[model] = (*std::max_element(answers.begin(), answers.end(),
                                            [](const Annotation* l, const Annotation* r) { return l->id < r->id; }))->score;
        } else {
            std::vector<int> scores;
            for (const auto* a : answers) scores.push_back(a->score);
            std::sort(scores.begin(), scores.end());
            out[model] = scores[(scores.size() - 1) / 2];  // lower median
        }
    }
    return out;
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const auto& m : models) {
        if (m.id.empty()) throw Error("manifest model with empty id");
        if (!ids.insert(m.id).second) throw Error("manifest repeats model id " + m.id);
    }
    std::set<std::uint64_t> annotation_ids;
    for (const auto& a : annotations) {
        if (!ids.count(a.model_id)) throw Error("annotation " + std::to_string(a.id) + " references unknown model " + a.model_id);
        if (!valid_score(a.score)) throw Error("annotation " + std::to_string(a.id) + " has score outside [0, 10]");
        if (!annotation_ids.insert(a.id).second) throw Error("manifest repeats annotation id " + std::to_string(a.id));
    }
    for (const auto& [model, split] : splits) {
        if (!ids.count(model)) throw Error("split assignment references unknown model " + model);
    }
    plan.validate();
}

std::string serialize_manifest(const DatasetManifest& m) {
    std::string out;
    auto line = [&](const json& j) {
        out += j.dump();
        out += '\n';
    };
    line({{"record", "manifest"}, {"format_version", m.format_version}});
    json plan = to_json(m.plan);
    plan["record"] = "plan";
    line(plan);
    for (const auto& e : m.models) {
        line({{"record", "model"},
              {"id", e.id},
              {"source_hash", e.source_hash},
              {"name", e.name},
              {"source_format", e.source_format},
              {"resolution", e.resolution},
              {"binvox", e.binvox_path}});
    }
    for (const auto& [model, split] : m.splits) {
        line({{"record", "split"}, {"model_id", model}, {"split", std::string(to_string(split))}});
    }
    for (const auto& a : m.annotations) {
        line({{"record", "annotation"},
              {"id", a.id},
              {"model_id", a.model_id},
              {"question_id", a.question_id},
              {"score", a.score},
              {"annotator", a.annotator},
              {"timestamp", a.timestamp}});
    }
    return out;
}

DatasetManifest parse_manifest(std::string_view text) {
    DatasetManifest m;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool saw_header = false;
    while (pos < text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            const json j = json::parse(line);
            const std::string kind = j.at("record").get<std::string>();
            if (kind == "manifest") {
                m.format_version = j.at("format_version").get<int>();
                if (m.format_version != kManifestVersion) {
                    throw Error("unsupported manifest format version " + std::to_string(m.format_version));
                }
                saw_header = true;
            } else if (kind == "plan") {
                m.plan = plan_from_json(j);
            } else if (kind == "model") {
                m.models.push_back({j.at("id").get<std::string>(), j.at("source_hash").get<std::string>(),
                                    j.value("name", std::string{}), j.at("source_format").get<std::string>(),
                                    j.at("resolution").get<int>(), j.at("binvox").get<std::string>()});
            } else if (kind == "split") {
                const std::string s = j.at("split").get<std::string>();
                if (s != "train" && s != "eval") throw Error("unknown split '" + s + "'");
                m.splits[j.at("model_id").get<std::string>()] = s == "train" ? Split::train : Split::eval;
            } else if (kind == "annotation") {
                m.annotations.push_back({j.at("id").get<std::uint64_t>(), j.at("model_id").get<std::string>(),
                                         j.at("question_id").get<std::string>(), j.at("score").get<int>(),
                                         j.at("annotator").get<std::string>(), j.at("timestamp").get<std::string>()});
            } else {
                throw Error("unknown record type '" + kind + "'");
            }
        } catch (const json::exception& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what(), line_no, ParseError::Unit::line);
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": " + e.what(), line_no, ParseError::Unit::line);
        }
    }
    if (!saw_header && line_no > 0) throw ParseError("manifest lacks a version record", 1, ParseError::Unit::line);
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Files

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    static std::atomic<unsigned> counter{0};
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + tmp.string() + "'");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw Error("failed writing '" + tmp.string() + "'");
        }
    }
    fs::rename(tmp, path);
}

void write_file_atomic(const fs::path& path, std::string_view text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex += kHex[digest[i] >> 4];
        hex += kHex[digest[i] & 15];
    }
    return hex;
}

std::string utc_timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    const fs::path manifest_path = root_ / "manifest.jsonl";
    if (fs::exists(manifest_path)) {
        const auto bytes = read_file(manifest_path);
        manifest_ = std::make_shared<const DatasetManifest>(
            parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
    } else {
        manifest_ = std::make_shared<const DatasetManifest>();
    }
}

std::shared_ptr<const DatasetManifest> Dataset::snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return manifest_;
}

void Dataset::commit(std::shared_ptr<const DatasetManifest> next) {
    next->validate();
    write_file_atomic(root_ / "manifest.jsonl", serialize_manifest(*next));
    std::lock_guard lock(snapshot_mutex_);
    manifest_ = std::move(next);
}

std::string Dataset::ingest_model(std::span<const std::uint8_t> file, SourceFormat format, int resolution,
                                  std::string name) {
    if (file.empty()) throw Error("empty model file");
    const std::string hash = sha256_hex(file);
    const std::string id = hash.substr(0, 16);

    std::lock_guard writer(writer_mutex_);
    const auto current = snapshot();
    if (current->find_model(id)) return id;

    const TriangleMesh mesh = parse_mesh(file, format);
    const VoxelGrid grid = voxelize(mesh, resolution);
    const std::string rel = "voxels/" + id + ".binvox";
    write_file_atomic(root_ / rel, write_binvox(grid));

    auto next = std::make_shared<DatasetManifest>(*current);
    next->models.push_back({id, hash, std::move(name), std::string(to_string(mesh.source_format)), resolution, rel});
    commit(std::move(next));
    return id;
}

Annotation Dataset::record_annotation(const std::string& model_id, const std::string& question_id, int score,
                                      const std::string& annotator, std::optional<std::string> timestamp) {
    if (!valid_score(score)) throw Error("score " + std::to_string(score) + " outside [0, 10]");
    if (question_id.empty()) throw Error("annotation needs a question id");

    std::lock_guard writer(writer_mutex_);
    const auto current = snapshot();
    if (!current->find_model(model_id)) throw Error("unknown model '" + model_id + "'");

    Annotation a;
    a.id = current->annotations.empty() ? 1 : current->annotations.back().id + 1;
    a.model_id = model_id;
    a.question_id = question_id;
    a.score = score;
    a.annotator = annotator;
    a.timestamp = timestamp ? *timestamp : utc_timestamp_now();

    auto next = std::make_shared<DatasetManifest>(*current);
    next->annotations.push_back(a);
    commit(std::move(next));
    return a;
}

void Dataset::set_plan(const AugmentationPlan& plan) {
    plan.validate();
    std::lock_guard writer(writer_mutex_);
    auto next = std::make_shared<DatasetManifest>(*snapshot());
    next->plan = plan;
    commit(std::move(next));
}

void Dataset::assign_splits(std::size_t eval_count, std::uint64_t seed) {
    std::lock_guard writer(writer_mutex_);
    const auto current = snapshot();
    if (eval_count >= current->models.size()) {
        throw Error("cannot hold out " + std::to_string(eval_count) + " of " + std::to_string(current->models.size()) +
                    " models for evaluation");
    }
    std::vector<std::string> ids;
    for (const auto& m : current->models) ids.push_back(m.id);
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 rng(seed);
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        std::swap(ids[i], ids[static_cast<std::size_t>(rng() % (i + 1))]);
    }
    auto next = std::make_shared<DatasetManifest>(*current);
    next->splits.clear();
    for (std::size_t i = 0; i < ids.size(); ++i) next->splits[ids[i]] = i < eval_count ? Split::eval : Split::train;
    commit(std::move(next));
}

VoxelGrid Dataset::load_grid(const std::string& model_id) const {
    const auto current = snapshot();
    const ModelEntry* m = current->find_model(model_id);
    if (!m) throw Error("unknown model '" + model_id + "'");
    return read_binvox(read_file(root_ / m->binvox_path));
}

fs::path Dataset::checkpoint_path(const std::string& question_id) const {
    return root_ / "checkpoints" / (question_id + ".ckpt");
}

}  // namespace neurocad
