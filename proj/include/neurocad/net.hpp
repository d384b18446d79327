#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "neurocad/labels.hpp"
#include "neurocad/voxel.hpp"

namespace neurocad {

/// Dense real tensor, row-major.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

    std::size_t size() const { return values.size(); }
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

enum class LayerKind { conv3d_pool, conv3d_same, fully_connected };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view s);

struct LayerSpec {
    LayerKind kind = LayerKind::conv3d_pool;
    int filters = 0;                          // output channels, or units for dense layers
    std::array<int, 3> filter_size{2, 2, 2};  // x, y, z; ignored for dense layers
    std::vector<int> output_shape;            // conv: {x, y, z, channels}; dense: {units}

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Convolutional feature extractor followed by dense layers, single-channel
/// voxel input, 11 logistic outputs. Hidden layers use ReLU. Convolutions are
/// SAME-padded with stride 1; conv3d_pool layers add a 2x2x2 max pool.
struct NetworkArchitecture {
    std::string name;
    GridDims input;
    std::vector<LayerSpec> layers;
    int output_size = kScoreLevels;

    /// Fills in output shapes and checks consistency. Throws Error.
    static NetworkArchitecture from_layers(std::string name, GridDims input, std::vector<LayerSpec> layers);

    std::size_t parameter_count() const;
    std::size_t input_channels(std::size_t layer) const;
    std::size_t input_size(std::size_t layer) const;

    nlohmann::json to_json() const;
    static NetworkArchitecture from_json(const nlohmann::json& j);

    friend bool operator==(const NetworkArchitecture&, const NetworkArchitecture&) = default;
};

/// Conv filters min(512, 32 * 2^j). At 64 this is the eight-conv-layer
/// layout 32^3 ... 1^3 with dense 512 -> 128 -> 11; other powers of two from
/// 16 to 1024 shrink or grow the number of layers.
NetworkArchitecture build_single_part_net(int input_resolution = 64);

/// `conv_layers` conv+pool layers halving every axis, then dense 128 -> 11.
/// Default input is three 64^3 grids side by side (192 x 64 x 64).
NetworkArchitecture build_assembly_net(GridDims input = {192, 64, 64}, int conv_layers = 6);

/// Part A, part B and the assembled configuration concatenated along x.
FloatTensor3 concat_assembly(const VoxelGrid& part_a, const VoxelGrid& part_b, const VoxelGrid& assembled);

struct LayerParams {
    Tensor weights;  // conv: {out, in, kz, ky, kx}; dense: {out, in}
    Tensor biases;   // {out}

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

using ParamSet = std::vector<LayerParams>;

struct AdamState {
    ParamSet first_moment;
    ParamSet second_moment;
    std::uint64_t step = 0;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

struct NetworkParams {
    ParamSet layers;
    AdamState adam;

    friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

/// All-zero parameters and moments shaped for `arch`.
NetworkParams zero_params(const NetworkArchitecture& arch);
ParamSet zero_like(const ParamSet& params);

/// Fan-in scaled uniform initialization, U(-sqrt(6/fan_in), sqrt(6/fan_in)),
/// zero biases. Deterministic for a given seed on every platform.
NetworkParams init_params(const NetworkArchitecture& arch, std::uint64_t seed);

std::size_t flat_size(const ParamSet& set);
double& flat_at(ParamSet& set, std::size_t index);
double flat_at(const ParamSet& set, std::size_t index);

ScoreCurve forward(const NetworkArchitecture& arch, const NetworkParams& params, const FloatTensor3& input);

/// Sum over neurons of (exp(-e^2) - exp(-p^2))^4.
double cost(const ScoreCurve& expected, const ScoreCurve& predicted);

/// d cost / d predicted.
ScoreCurve cost_gradient(const ScoreCurve& expected, const ScoreCurve& predicted);

struct BackwardResult {
    ParamSet gradients;
    ScoreCurve prediction{};
    double cost = 0.0;
};

BackwardResult backward(const NetworkArchitecture& arch, const NetworkParams& params, const FloatTensor3& input,
                        const ScoreCurve& expected);

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Bias-corrected ADAM update in place; increments the step counter.
void adam_step(NetworkParams& params, const ParamSet& gradients, const AdamConfig& config);

struct GradientCheckReport {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::size_t worst_parameter_index = 0;
    std::size_t checked = 0;
    std::size_t skipped_at_kink = 0;
};

/// Central differences (C(p + h) - C(p - h)) / 2h on every bias plus up to
/// `max_weights` randomly sampled weights (all weights when 0).
GradientCheckReport gradient_check(const NetworkArchitecture& arch, const NetworkParams& params,
                                   const FloatTensor3& input, const ScoreCurve& expected, double h,
                                   std::size_t max_weights = 0, std::uint64_t seed = 1);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    NetworkArchitecture arch;
    NetworkParams params;
    std::map<std::string, std::string> metadata;
};

/// Magic, version, JSON descriptor (architecture + metadata), then named,
/// shape-tagged little-endian float32 tensors and the ADAM step counter.
std::vector<std::uint8_t> write_checkpoint(const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace neurocad
