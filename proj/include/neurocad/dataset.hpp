#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neurocad/augment.hpp"
#include "neurocad/mesh.hpp"
#include "neurocad/voxel.hpp"

namespace neurocad {

inline constexpr int kManifestVersion = 1;

struct ModelEntry {
    std::string id;           // first 16 hex digits of source_hash
    std::string source_hash;  // SHA-256 of the uploaded file
    std::string name;
    std::string source_format;
    int resolution = 0;
    std::string binvox_path;  // relative to the data directory

    friend bool operator==(const ModelEntry&, const ModelEntry&) = default;
};

struct Annotation {
    std::uint64_t id = 0;
    std::string model_id;
    std::string question_id;
    int score = 0;
    std::string annotator;
    std::string timestamp;  // ISO-8601 UTC

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

enum class Split { train, eval };
enum class Aggregation { most_recent, median };

std::string_view to_string(Split split);
std::string_view to_string(Aggregation aggregation);
Aggregation aggregation_from_string(std::string_view s);

struct DatasetManifest {
    int format_version = kManifestVersion;
    std::vector<ModelEntry> models;
    std::vector<Annotation> annotations;  // append-only history
    AugmentationPlan plan = AugmentationPlan::default_plan();
    std::map<std::string, Split> splits;  // models without an entry train

    const ModelEntry* find_model(std::string_view id) const;
    Split split_of(std::string_view model_id) const;
    std::vector<Annotation> annotations_for(std::string_view model_id) const;

    /// One label per model for `question_id`. Each annotator's latest answer
    /// counts; annotators are then combined by `aggregation`.
    std::map<std::string, int> labels(std::string_view question_id, Aggregation aggregation = Aggregation::most_recent) const;

    /// Throws Error when a record references an unknown model or ids repeat.
    void validate() const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Line-delimited JSON records, one per model / split / annotation, preceded
/// by a version record and the augmentation plan.
std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(std::string_view text);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string utc_timestamp_now();

/// A data directory: manifest.jsonl plus content-addressed voxel files.
/// Mutations are serialized and replace the manifest atomically; readers get
/// immutable snapshots.
class Dataset {
public:
    explicit Dataset(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::shared_ptr<const DatasetManifest> snapshot() const;

    /// Parses, voxelizes and stores a mesh. Identical content returns the
    /// existing id without touching the manifest.
    std::string ingest_model(std::span<const std::uint8_t> file, SourceFormat format, int resolution,
                             std::string name = {});

    /// Appends an annotation; returns its id. Throws Error for unknown models
    /// or scores outside 0..10.
    Annotation record_annotation(const std::string& model_id, const std::string& question_id, int score,
                                 const std::string& annotator, std::optional<std::string> timestamp = std::nullopt);

    void set_plan(const AugmentationPlan& plan);

    /// Seeded random choice of `eval_count` evaluation models; the rest train.
    void assign_splits(std::size_t eval_count, std::uint64_t seed);

    VoxelGrid load_grid(const std::string& model_id) const;

    std::filesystem::path checkpoint_path(const std::string& question_id) const;

private:
    void commit(std::shared_ptr<const DatasetManifest> next);

    std::filesystem::path root_;
    mutable std::mutex snapshot_mutex_;
    std::mutex writer_mutex_;
    std::shared_ptr<const DatasetManifest> manifest_;
};

}  // namespace neurocad
