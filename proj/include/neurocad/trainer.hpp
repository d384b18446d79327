#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurocad/dataset.hpp"
#include "neurocad/net.hpp"

namespace neurocad {

struct TrainingConfig {
    std::string question_id = "default";
    double learning_rate = 2e-4;
    int epochs = 10;
    int batch_size = 8;
    std::uint64_t seed = 1;
    int resolution = 0;  // 0: the dataset's voxel resolution
    bool augmentation = true;
    int tolerance_steps = 2;
    Aggregation aggregation = Aggregation::most_recent;

    std::uint64_t max_steps = 0;         // 0: no limit
    double stop_at_exact_accuracy = 0.0; // >0: stop after the first epoch reaching it
    int checkpoint_every = 0;            // epochs; 0 writes only the final checkpoint
    std::string checkpoint_path;         // empty: no checkpoints during train()

    // Batch rotation: the shuffled invariants are partitioned into this many
    // groups and training sees one group at a time, switching every
    // `rotation_epochs` epochs. 1 trains on everything each epoch.
    int rotation_groups = 1;
    int rotation_epochs = 1;

    int threads = 0;  // 0: OpenMP default

    /// Throws Error for non-positive numerics or a negative learning rate.
    void validate() const;
};

nlohmann::json to_json(const TrainingConfig& config);
TrainingConfig training_config_from_json(const nlohmann::json& j);

struct EpochRecord {
    int epoch = 0;
    std::uint64_t steps = 0;          // optimizer steps so far
    std::size_t samples = 0;
    double mean_cost = 0.0;
    double exact_accuracy = 0.0;      // decoded argmax equals the label
    double tolerance_accuracy = 0.0;  // within config.tolerance_steps
};

struct TrainingSample {
    std::string model_id;
    VoxelGrid grid;
    int score = 0;
};

struct TrainResult {
    NetworkArchitecture arch;
    NetworkParams params;
    std::vector<EpochRecord> history;
    std::vector<double> step_costs;  // mean batch cost of every optimizer step
    std::uint64_t steps = 0;
    bool diverged = false;
    bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded minibatch ADAM over the augmented invariants of `samples`. Batch
/// gradients are summed in sample order, so results do not depend on the
/// number of threads. A non-finite cost stops training and returns the last
/// parameters that produced a finite one, with `diverged` set.
TrainResult train_samples(const NetworkArchitecture& arch, const std::vector<TrainingSample>& samples,
                          const AugmentationPlan& plan, const TrainingConfig& config,
                          const EpochCallback& on_epoch = {});

/// Annotated training-split models of the dataset, at their stored resolution.
std::vector<TrainingSample> training_samples(const Dataset& dataset, const std::string& question_id,
                                             Aggregation aggregation, Split split = Split::train);

/// Builds the single-part network for the dataset's resolution and trains on
/// its training split. Writes checkpoints if config.checkpoint_path is set.
TrainResult train(const Dataset& dataset, const TrainingConfig& config, const EpochCallback& on_epoch = {});

Checkpoint make_checkpoint(const TrainResult& result, const TrainingConfig& config);

struct EvaluationRow {
    std::string model_id;
    int expected = 0;
    int predicted = 0;
    double peak_height = 0.0;
    bool within_tolerance = false;
};

struct EvaluationReport {
    std::vector<EvaluationRow> rows;
    int tolerance_steps = 2;
    double accuracy_2step = 0.0;
    double accuracy_1step = 0.0;
    double exact_accuracy = 0.0;
    double max_error = 0.0;  // largest |predicted - expected| / 11
    std::uint64_t seed = 0;
    std::string question_id;

    double accuracy_at(int steps) const;
};

/// Fills the aggregate fields from rows (also recomputing each row's flag).
EvaluationReport summarize(std::vector<EvaluationRow> rows, int tolerance_steps = 2);

/// Predictions on the unaugmented evaluation-split voxels.
EvaluationReport evaluate(const Checkpoint& checkpoint, const Dataset& dataset, const TrainingConfig& config);
EvaluationReport evaluate_samples(const NetworkArchitecture& arch, const NetworkParams& params,
                                  const std::vector<TrainingSample>& samples, int tolerance_steps = 2);

/// One JSON object per row followed by a summary record.
std::string report_to_jsonl(const EvaluationReport& report);
std::string format_report_table(const EvaluationReport& report);

struct ConfidenceRegression {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t samples = 0;
    bool degenerate = false;  // zero-variance abscissa
};

/// OLS of y on x. Needs at least three points.
ConfidenceRegression fit_line(std::span<const double> x, std::span<const double> y);

/// Regresses |predicted - expected| / 11 on |peak_height - 1|.
ConfidenceRegression confidence_regression(const EvaluationReport& report);

struct Assessment {
    int score = 0;
    double peak_height = 0.0;
    ScoreCurve curve{};
    int band_low = 0;   // score - tolerance, clamped to the scale
    int band_high = 0;  // score + tolerance, clamped
};

Assessment assess_grid(const Checkpoint& checkpoint, const VoxelGrid& grid, int tolerance_steps = 2);
/// Parses, voxelizes at the network's input resolution and assesses.
Assessment assess(const Checkpoint& checkpoint, std::span<const std::uint8_t> mesh_file, SourceFormat format,
                  int tolerance_steps = 2);

}  // namespace neurocad
