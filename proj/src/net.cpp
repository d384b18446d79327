#include "neurocad/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Core>

namespace neurocad {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    values.assign(n, fill);
}

std::string_view to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv3d_pool: return "conv3d_pool";
        case LayerKind::conv3d_same: return "conv3d_same";
        case LayerKind::fully_connected: return "fully_connected";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(std::string_view s) {
    if (s == "conv3d_pool") return LayerKind::conv3d_pool;
    if (s == "conv3d_same") return LayerKind::conv3d_same;
    if (s == "fully_connected") return LayerKind::fully_connected;
    throw Error("unknown layer kind '" + std::string(s) + "'");
}

namespace {

bool is_conv(LayerKind k) { return k != LayerKind::fully_connected; }

int pad_before(int k) { return (k - 1) / 2; }

std::size_t kernel_volume(const LayerSpec& l) {
    return static_cast<std::size_t>(l.filter_size[0]) * l.filter_size[1] * l.filter_size[2];
}

}  // namespace

// ---------------------------------------------------------------------------
// Architecture

NetworkArchitecture NetworkArchitecture::from_layers(std::string name, GridDims input, std::vector<LayerSpec> layers) {
    if (input.x <= 0 || input.y <= 0 || input.z <= 0) throw Error("network input dimensions must be positive");
    if (layers.empty()) throw Error("network needs at least one layer");

    NetworkArchitecture arch;
    arch.name = std::move(name);
    arch.input = input;

    int x = input.x, y = input.y, z = input.z, channels = 1;
    std::size_t flat = 0;
    bool dense_started = false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i + 1) + ": ";
        if (l.filters <= 0) throw Error(where + "filter/unit count must be positive");
        if (is_conv(l.kind)) {
            if (dense_started) throw Error(where + "convolution after a dense layer");
            for (int k : l.filter_size) {
                if (k <= 0) throw Error(where + "filter size must be positive");
            }
            if (l.kind == LayerKind::conv3d_pool) {
                if (x % 2 || y % 2 || z % 2) {
                    throw Error(where + "cannot pool odd extent " + std::to_string(x) + "x" + std::to_string(y) + "x" +
                                std::to_string(z));
                }
                x /= 2;
                y /= 2;
                z /= 2;
            }
            channels = l.filters;
            l.output_shape = {x, y, z, channels};
            flat = static_cast<std::size_t>(x) * y * z * channels;
        } else {
            dense_started = true;
            l.output_shape = {l.filters};
            flat = static_cast<std::size_t>(l.filters);
        }
    }
    if (layers.back().kind != LayerKind::fully_connected) throw Error("last layer must be dense");
    if (layers.back().filters != kScoreLevels) throw Error("last layer must have 11 units");
    (void)flat;
    arch.layers = std::move(layers);
    return arch;
}

std::size_t NetworkArchitecture::input_channels(std::size_t layer) const {
    if (layer == 0) return 1;
    const auto& prev = layers[layer - 1].output_shape;
    return is_conv(layers[layer - 1].kind) ? static_cast<std::size_t>(prev[3]) : static_cast<std::size_t>(prev[0]);
}

std::size_t NetworkArchitecture::input_size(std::size_t layer) const {
    if (layer == 0) return input.count();
    const auto& prev = layers[layer - 1].output_shape;
    return std::accumulate(prev.begin(), prev.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

std::size_t NetworkArchitecture::parameter_count() const {
    std::size_t total = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::size_t out = static_cast<std::size_t>(l.filters);
        total += is_conv(l.kind) ? out * input_channels(i) * kernel_volume(l) + out : out * input_size(i) + out;
    }
    return total;
}

nlohmann::json NetworkArchitecture::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["input"] = {input.x, input.y, input.z};
    j["output_size"] = output_size;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
        j["layers"].push_back({{"kind", std::string(neurocad::to_string(l.kind))},
                               {"filters", l.filters},
                               {"filter_size", l.filter_size},
                               {"output_shape", l.output_shape}});
    }
    return j;
}

NetworkArchitecture NetworkArchitecture::from_json(const nlohmann::json& j) {
    try {
        const auto in = j.at("input").get<std::array<int, 3>>();
        std::vector<LayerSpec> layers;
        for (const auto& lj : j.at("layers")) {
            LayerSpec l;
            l.kind = layer_kind_from_string(lj.at("kind").get<std::string>());
            l.filters = lj.at("filters").get<int>();
            l.filter_size = lj.at("filter_size").get<std::array<int, 3>>();
            layers.push_back(l);
        }
        return from_layers(j.value("name", std::string{}), GridDims{in[0], in[1], in[2]}, std::move(layers));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("malformed architecture descriptor: ") + e.what());
    }
}

namespace {

LayerSpec conv_layer(LayerKind kind, int filters) { return LayerSpec{kind, filters, {2, 2, 2}, {}}; }
LayerSpec dense_layer(int units) { return LayerSpec{LayerKind::fully_connected, units, {1, 1, 1}, {}}; }
int conv_filters(int j) { return std::min(512, 32 << std::min(j, 5)); }

}  // namespace

NetworkArchitecture build_single_part_net(int input_resolution) {
    if (input_resolution < 16 || input_resolution > kMaxGridDim || !std::has_single_bit(static_cast<unsigned>(input_resolution))) {
        throw Error("single-part net needs a power-of-two resolution in [16, 1024], got " +
                    std::to_string(input_resolution));
    }
    const int k = std::countr_zero(static_cast<unsigned>(input_resolution));
    std::vector<LayerSpec> layers;
    int j = 0;
    for (int i = 0; i < k - 1; ++i) layers.push_back(conv_layer(LayerKind::conv3d_pool, conv_filters(j++)));
    for (int i = 0; i < std::max(0, k - 4); ++i) layers.push_back(conv_layer(LayerKind::conv3d_same, conv_filters(j++)));
    layers.push_back(conv_layer(LayerKind::conv3d_pool, conv_filters(j++)));
    layers.push_back(dense_layer(128));
    layers.push_back(dense_layer(kScoreLevels));
    return NetworkArchitecture::from_layers("single_part_" + std::to_string(input_resolution),
                                            GridDims{input_resolution, input_resolution, input_resolution},
                                            std::move(layers));
}

NetworkArchitecture build_assembly_net(GridDims input, int conv_layers) {
    if (conv_layers <= 0) throw Error("assembly net needs at least one convolution layer");
    const int divisor = 1 << conv_layers;
    if (input.x % divisor || input.y % divisor || input.z % divisor) {
        throw Error("assembly net input " + std::to_string(input.x) + "x" + std::to_string(input.y) + "x" +
                    std::to_string(input.z) + " is not divisible by 2^" + std::to_string(conv_layers) + " on every axis");
    }
    std::vector<LayerSpec> layers;
    for (int j = 0; j < conv_layers; ++j) layers.push_back(conv_layer(LayerKind::conv3d_pool, conv_filters(j)));
    layers.push_back(dense_layer(128));
    layers.push_back(dense_layer(kScoreLevels));
    return NetworkArchitecture::from_layers("assembly", input, std::move(layers));
}

FloatTensor3 concat_assembly(const VoxelGrid& part_a, const VoxelGrid& part_b, const VoxelGrid& assembled) {
    const GridDims d = part_a.dims();
    if (part_b.dims() != d || assembled.dims() != d) throw Error("assembly parts must share grid dimensions");
    FloatTensor3 out{GridDims{3 * d.x, d.y, d.z}, {}};
    out.values.reserve(out.dims.count());
    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            for (const VoxelGrid* g : {&part_a, &part_b, &assembled}) {
                for (int x = 0; x < d.x; ++x) out.values.push_back(g->at(x, y, z) ? 1.0 : 0.0);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameters

NetworkParams zero_params(const NetworkArchitecture& arch) {
    NetworkParams p;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const auto& l = arch.layers[i];
        const std::size_t out = static_cast<std::size_t>(l.filters);
        LayerParams lp;
        if (is_conv(l.kind)) {
            lp.weights = Tensor({out, arch.input_channels(i), static_cast<std::size_t>(l.filter_size[2]),
                                 static_cast<std::size_t>(l.filter_size[1]), static_cast<std::size_t>(l.filter_size[0])});
        } else {
            lp.weights = Tensor({out, arch.input_size(i)});
        }
        lp.biases = Tensor({out});
        p.layers.push_back(std::move(lp));
    }
    p.adam.first_moment = p.layers;
    p.adam.second_moment = p.layers;
    return p;
}

ParamSet zero_like(const ParamSet& params) {
    ParamSet out = params;
    for (auto& l : out) {
        std::fill(l.weights.values.begin(), l.weights.values.end(), 0.0);
        std::fill(l.biases.values.begin(), l.biases.values.end(), 0.0);
    }
    return out;
}

NetworkParams init_params(const NetworkArchitecture& arch, std::uint64_t seed) {
    NetworkParams p = zero_params(arch);
    std::mt19937_64 rng(seed);
    for (auto& l : p.layers) {
        const std::size_t fan_in = l.weights.size() / l.weights.shape[0];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& w : l.weights.values) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            w = (2.0 * u - 1.0) * limit;
        }
    }
    return p;
}

std::size_t flat_size(const ParamSet& set) {
    std::size_t n = 0;
    for (const auto& l : set) n += l.weights.size() + l.biases.size();
    return n;
}

double& flat_at(ParamSet& set, std::size_t index) {
    for (auto& l : set) {
        if (index < l.weights.size()) return l.weights.values[index];
        index -= l.weights.size();
        if (index < l.biases.size()) return l.biases.values[index];
        index -= l.biases.size();
    }
    throw Error("parameter index out of range");
}

double flat_at(const ParamSet& set, std::size_t index) { return flat_at(const_cast<ParamSet&>(set), index); }

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct Geometry {
    int x, y, z;
    std::size_t plane() const { return static_cast<std::size_t>(x) * y * z; }
};

// Rows of `col` are (channel, kz, ky, kx); columns are output cells (z, y, x).
void im2col(const double* in, std::size_t channels, Geometry g, const std::array<int, 3>& k, std::vector<double>& col) {
    const std::size_t cells = g.plane();
    const std::size_t rows = channels * static_cast<std::size_t>(k[0]) * k[1] * k[2];
    col.assign(rows * cells, 0.0);
    const int px = pad_before(k[0]), py = pad_before(k[1]), pz = pad_before(k[2]);
    std::size_t row = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        const double* plane = in + c * cells;
        for (int dz = 0; dz < k[2]; ++dz) {
            for (int dy = 0; dy < k[1]; ++dy) {
                for (int dx = 0; dx < k[0]; ++dx, ++row) {
                    double* dst = col.data() + row * cells;
                    const int ox = dx - px;
                    const int x0 = std::max(0, -ox), x1 = std::min(g.x, g.x - ox);
                    for (int z = 0; z < g.z; ++z) {
                        const int sz = z + dz - pz;
                        if (sz < 0 || sz >= g.z) continue;
                        for (int y = 0; y < g.y; ++y) {
                            const int sy = y + dy - py;
                            if (sy < 0 || sy >= g.y) continue;
                            const double* src = plane + (static_cast<std::size_t>(sz) * g.y + sy) * g.x;
                            double* out = dst + (static_cast<std::size_t>(z) * g.y + y) * g.x;
                            for (int x = x0; x < x1; ++x) out[x] = src[x + ox];
                        }
                    }
                }
            }
        }
    }
}

void col2im(const std::vector<double>& col, std::size_t channels, Geometry g, const std::array<int, 3>& k, double* in) {
    const std::size_t cells = g.plane();
    std::fill(in, in + channels * cells, 0.0);
    const int px = pad_before(k[0]), py = pad_before(k[1]), pz = pad_before(k[2]);
    std::size_t row = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        double* plane = in + c * cells;
        for (int dz = 0; dz < k[2]; ++dz) {
            for (int dy = 0; dy < k[1]; ++dy) {
                for (int dx = 0; dx < k[0]; ++dx, ++row) {
                    const double* src = col.data() + row * cells;
                    const int ox = dx - px;
                    const int x0 = std::max(0, -ox), x1 = std::min(g.x, g.x - ox);
                    for (int z = 0; z < g.z; ++z) {
                        const int sz = z + dz - pz;
                        if (sz < 0 || sz >= g.z) continue;
                        for (int y = 0; y < g.y; ++y) {
                            const int sy = y + dy - py;
                            if (sy < 0 || sy >= g.y) continue;
                            double* dst = plane + (static_cast<std::size_t>(sz) * g.y + sy) * g.x;
                            const double* s = src + (static_cast<std::size_t>(z) * g.y + y) * g.x;
                            for (int x = x0; x < x1; ++x) dst[x + ox] += s[x];
                        }
                    }
                }
            }
        }
    }
}

struct LayerTrace {
    std::vector<double> col;                // conv: im2col of the layer input
    std::vector<double> activated;          // conv: ReLU output before pooling; dense: layer output
    std::vector<std::uint32_t> argmax;      // conv3d_pool: index into `activated` per pooled cell
    std::vector<double> output;             // layer output fed to the next layer
    Geometry geometry{};                    // conv: spatial extent before pooling
};

struct Trace {
    std::vector<LayerTrace> layers;
    ScoreCurve prediction{};
};

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void run_forward(const NetworkArchitecture& arch, const NetworkParams& params, const FloatTensor3& input, Trace& trace) {
    if (input.dims != arch.input || input.values.size() != arch.input.count()) {
        throw Error("input shape " + std::to_string(input.dims.x) + "x" + std::to_string(input.dims.y) + "x" +
                    std::to_string(input.dims.z) + " does not match network input " + std::to_string(arch.input.x) +
                    "x" + std::to_string(arch.input.y) + "x" + std::to_string(arch.input.z));
    }
    if (params.layers.size() != arch.layers.size()) throw Error("parameter set does not match architecture");

    trace.layers.resize(arch.layers.size());
    const double* in = input.values.data();
    Geometry g{arch.input.x, arch.input.y, arch.input.z};

    for (std::size_t li = 0; li < arch.layers.size(); ++li) {
        const LayerSpec& spec = arch.layers[li];
        const LayerParams& lp = params.layers[li];
        LayerTrace& t = trace.layers[li];
        const std::size_t out_ch = static_cast<std::size_t>(spec.filters);

        if (is_conv(spec.kind)) {
            const std::size_t in_ch = arch.input_channels(li);
            const std::size_t cells = g.plane();
            const std::size_t k_rows = in_ch * kernel_volume(spec);
            t.geometry = g;
            im2col(in, in_ch, g, spec.filter_size, t.col);
            t.activated.resize(out_ch * cells);
            MatrixMap act(t.activated.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(cells));
            ConstMatrixMap w(lp.weights.values.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(k_rows));
            ConstMatrixMap col(t.col.data(), static_cast<Eigen::Index>(k_rows), static_cast<Eigen::Index>(cells));
            act.noalias() = w * col;
            for (std::size_t c = 0; c < out_ch; ++c) {
                const double b = lp.biases.values[c];
                double* row = t.activated.data() + c * cells;
                for (std::size_t i = 0; i < cells; ++i) row[i] = std::max(0.0, row[i] + b);
            }

            if (spec.kind == LayerKind::conv3d_pool) {
                const Geometry h{g.x / 2, g.y / 2, g.z / 2};
                const std::size_t pooled = h.plane();
                t.output.resize(out_ch * pooled);
                t.argmax.resize(out_ch * pooled);
                for (std::size_t c = 0; c < out_ch; ++c) {
                    const std::size_t base = c * cells;
                    for (int z = 0; z < h.z; ++z) {
                        for (int y = 0; y < h.y; ++y) {
                            for (int x = 0; x < h.x; ++x) {
                                std::size_t best = base + (static_cast<std::size_t>(2 * z) * g.y + 2 * y) * g.x + 2 * x;
                                double best_v = t.activated[best];
                                for (int dz = 0; dz < 2; ++dz) {
                                    for (int dy = 0; dy < 2; ++dy) {
                                        for (int dx = 0; dx < 2; ++dx) {
                                            const std::size_t idx =
                                                base + (static_cast<std::size_t>(2 * z + dz) * g.y + 2 * y + dy) * g.x + 2 * x + dx;
                                            if (t.activated[idx] > best_v) {
                                                best_v = t.activated[idx];
                                                best = idx;
                                            }
                                        }
                                    }
                                }
                                const std::size_t o = c * pooled + (static_cast<std::size_t>(z) * h.y + y) * h.x + x;
                                t.output[o] = best_v;
                                t.argmax[o] = static_cast<std::uint32_t>(best);
                            }
                        }
                    }
                }
                g = h;
            } else {
                t.output = t.activated;
                t.argmax.clear();
            }
        } else {
            const std::size_t in_n = arch.input_size(li);
            const bool last = li + 1 == arch.layers.size();
            t.activated.resize(out_ch);
            VectorMap out(t.activated.data(), static_cast<Eigen::Index>(out_ch));
            ConstMatrixMap w(lp.weights.values.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(in_n));
            ConstVectorMap x(in, static_cast<Eigen::Index>(in_n));
            ConstVectorMap b(lp.biases.values.data(), static_cast<Eigen::Index>(out_ch));
            out.noalias() = w * x + b;
            for (double& v : t.activated) v = last ? logistic(v) : std::max(0.0, v);
            t.output = t.activated;
        }
        in = t.output.data();
    }
    std::copy_n(trace.layers.back().output.begin(), kScoreLevels, trace.prediction.begin());
}

// Fingerprint of the piecewise-linear regime (ReLU masks, pool winners).
std::vector<std::uint8_t> activation_pattern(const Trace& trace) {
    std::vector<std::uint8_t> p;
    for (const auto& t : trace.layers) {
        for (double v : t.activated) p.push_back(v > 0.0 ? 1 : 0);
        for (std::uint32_t a : t.argmax) {
            for (int i = 0; i < 4; ++i) p.push_back(static_cast<std::uint8_t>(a >> (8 * i)));
        }
    }
    return p;
}

BackwardResult run_backward(const NetworkArchitecture& arch, const NetworkParams& params, const FloatTensor3& input,
                            const ScoreCurve& expected, const Trace& trace) {
    BackwardResult result;
    result.prediction = trace.prediction;
    result.cost = cost(expected, trace.prediction);
    result.gradients = zero_like(params.layers);

    const ScoreCurve dp = cost_gradient(expected, trace.prediction);
    std::vector<double> grad(kScoreLevels);
    for (int i = 0; i < kScoreLevels; ++i) {
        const double p = trace.prediction[static_cast<std::size_t>(i)];
        grad[static_cast<std::size_t>(i)] = dp[static_cast<std::size_t>(i)] * p * (1.0 - p);
    }

    std::vector<double> grad_in;
    std::vector<double> dcol;
    for (std::size_t li = arch.layers.size(); li-- > 0;) {
        const LayerSpec& spec = arch.layers[li];
        const LayerParams& lp = params.layers[li];
        LayerParams& gp = result.gradients[li];
        const LayerTrace& t = trace.layers[li];
        const double* layer_in = li == 0 ? input.values.data() : trace.layers[li - 1].output.data();
        const std::size_t out_ch = static_cast<std::size_t>(spec.filters);

        if (!is_conv(spec.kind)) {
            const std::size_t in_n = arch.input_size(li);
            ConstVectorMap g(grad.data(), static_cast<Eigen::Index>(out_ch));
            ConstVectorMap x(layer_in, static_cast<Eigen::Index>(in_n));
            MatrixMap dw(gp.weights.values.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(in_n));
            dw.noalias() = g * x.transpose();
            VectorMap(gp.biases.values.data(), static_cast<Eigen::Index>(out_ch)) = g;
            if (li > 0) {
                ConstMatrixMap w(lp.weights.values.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(in_n));
                grad_in.resize(in_n);
                VectorMap gi(grad_in.data(), static_cast<Eigen::Index>(in_n));
                gi.noalias() = w.transpose() * g;
                if (!is_conv(arch.layers[li - 1].kind)) {
                    // Hidden dense layers are rectified.
                    const auto& prev = trace.layers[li - 1].activated;
                    for (std::size_t i = 0; i < in_n; ++i) {
                        if (!(prev[i] > 0.0)) grad_in[i] = 0.0;
                    }
                }
                grad.swap(grad_in);
            }
            continue;
        }

        // Convolution: route through the pool, then the ReLU mask.
        const Geometry g = t.geometry;
        const std::size_t cells = g.plane();
        std::vector<double> g_pre;
        if (spec.kind == LayerKind::conv3d_pool) {
            g_pre.assign(out_ch * cells, 0.0);
            for (std::size_t i = 0; i < t.argmax.size(); ++i) g_pre[t.argmax[i]] += grad[i];
        } else {
            g_pre = grad;
        }
        for (std::size_t i = 0; i < g_pre.size(); ++i) {
            if (!(t.activated[i] > 0.0)) g_pre[i] = 0.0;
        }

        const std::size_t in_ch = arch.input_channels(li);
        const std::size_t k_rows = in_ch * kernel_volume(spec);
        ConstMatrixMap gm(g_pre.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(cells));
        ConstMatrixMap col(t.col.data(), static_cast<Eigen::Index>(k_rows), static_cast<Eigen::Index>(cells));
        MatrixMap dw(gp.weights.values.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(k_rows));
        dw.noalias() = gm * col.transpose();
        for (std::size_t c = 0; c < out_ch; ++c) {
            const double* row = g_pre.data() + c * cells;
            double s = 0.0;
            for (std::size_t i = 0; i < cells; ++i) s += row[i];
            gp.biases.values[c] = s;
        }
        if (li > 0) {
            ConstMatrixMap w(lp.weights.values.data(), static_cast<Eigen::Index>(out_ch), static_cast<Eigen::Index>(k_rows));
            dcol.resize(k_rows * cells);
            MatrixMap dc(dcol.data(), static_cast<Eigen::Index>(k_rows), static_cast<Eigen::Index>(cells));
            dc.noalias() = w.transpose() * gm;
            grad.resize(in_ch * cells);
            col2im(dcol, in_ch, g, spec.filter_size, grad.data());
            // The previous layer's output is already rectified (and pooled);
            // its own backward step applies the masks.
        }
    }
    return result;
}

}  // namespace

ScoreCurve forward(const NetworkArchitecture& arch, const NetworkParams& params, const FloatTensor3& input) {
    Trace trace;
    run_forward(arch, params, input, trace);
    return trace.prediction;
}

double cost(const ScoreCurve& expected, const ScoreCurve& predicted) {
    double c = 0.0;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const double d = std::exp(-expected[i] * expected[i]) - std::exp(-predicted[i] * predicted[i]);
        const double d2 = d * d;
        c += d2 * d2;
    }
    return c;
}

ScoreCurve cost_gradient(const ScoreCurve& expected, const ScoreCurve& predicted) {
    ScoreCurve g{};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const double ep = std::exp(-predicted[i] * predicted[i]);
        const double d = std::exp(-expected[i] * expected[i]) - ep;
        g[i] = 4.0 * d * d * d * (2.0 * predicted[i] * ep);
    }
    return g;
}

BackwardResult backward(const NetworkArchitecture& arch, const NetworkParams& params, const FloatTensor3& input,
                        const ScoreCurve& expected) {
    Trace trace;
    run_forward(arch, params, input, trace);
    return run_backward(arch, params, input, expected, trace);
}

void adam_step(NetworkParams& params, const ParamSet& gradients, const AdamConfig& config) {
    if (gradients.size() != params.layers.size()) throw Error("gradient set does not match parameters");
    if (!(config.learning_rate >= 0.0)) throw Error("learning rate must be non-negative");
    const std::uint64_t t = params.adam.step + 1;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));

    auto update = [&](Tensor& p, const Tensor& g, Tensor& m, Tensor& v) {
        if (g.size() != p.size()) throw Error("gradient tensor shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g.values[i];
            m.values[i] = config.beta1 * m.values[i] + (1.0 - config.beta1) * gi;
            v.values[i] = config.beta2 * v.values[i] + (1.0 - config.beta2) * gi * gi;
            const double m_hat = m.values[i] / c1;
            const double v_hat = v.values[i] / c2;
            p.values[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
        }
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        update(params.layers[l].weights, gradients[l].weights, params.adam.first_moment[l].weights,
               params.adam.second_moment[l].weights);
        update(params.layers[l].biases, gradients[l].biases, params.adam.first_moment[l].biases,
               params.adam.second_moment[l].biases);
    }
    params.adam.step = t;
}

GradientCheckReport gradient_check(const NetworkArchitecture& arch, const NetworkParams& params,
                                   const FloatTensor3& input, const ScoreCurve& expected, double h,
                                   std::size_t max_weights, std::uint64_t seed) {
    Trace base;
    run_forward(arch, params, input, base);
    const auto base_pattern = activation_pattern(base);
    const BackwardResult analytic = run_backward(arch, params, input, expected, base);

    std::vector<std::size_t> biases;
    std::vector<std::size_t> weights;
    std::size_t offset = 0;
    for (const auto& l : params.layers) {
        for (std::size_t i = 0; i < l.weights.size(); ++i) weights.push_back(offset + i);
        offset += l.weights.size();
        for (std::size_t i = 0; i < l.biases.size(); ++i) biases.push_back(offset + i);
        offset += l.biases.size();
    }
    if (max_weights != 0 && max_weights < weights.size()) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < max_weights; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng() % (weights.size() - i));
            std::swap(weights[i], weights[j]);
        }
        weights.resize(max_weights);
        std::sort(weights.begin(), weights.end());
    }

    GradientCheckReport report;
    NetworkParams probe = params;
    Trace trace;
    auto evaluate = [&](std::size_t idx, double value, bool& same_regime) {
        flat_at(probe.layers, idx) = value;
        run_forward(arch, probe, input, trace);
        same_regime = same_regime && activation_pattern(trace) == base_pattern;
        return cost(expected, trace.prediction);
    };
    for (const auto* list : {&biases, &weights}) {
        for (std::size_t idx : *list) {
            const double original = flat_at(params.layers, idx);
            bool same = true;
            const double plus = evaluate(idx, original + h, same);
            const double minus = evaluate(idx, original - h, same);
            flat_at(probe.layers, idx) = original;
            if (!same) {
                ++report.skipped_at_kink;
                continue;
            }
            const double numeric = (plus - minus) / (2.0 * h);
            const double a = flat_at(analytic.gradients, idx);
            const double abs_err = std::abs(a - numeric);
            const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
            ++report.checked;
            report.max_abs_err = std::max(report.max_abs_err, abs_err);
            if (report.checked == 1 || rel_err > report.max_rel_err) {
                report.max_rel_err = rel_err;
                report.worst_parameter_index = idx;
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'N', 'C', 'A', 'D', 'C', 'K', 'P', 'T'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return lo | (hi << 32);
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

    [[noreturn]] void fail(const std::string& message) const {
        throw ParseError(message + " at byte " + std::to_string(pos_), pos_, ParseError::Unit::byte);
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void read_tensor(ByteReader& r, const std::string& expected_name, Tensor& t) {
    const std::string name = r.str(r.u32());
    if (name != expected_name) r.fail("expected tensor '" + expected_name + "', found '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (rank != t.shape.size()) r.fail("rank mismatch for tensor '" + name + "'");
    for (std::size_t d : t.shape) {
        if (r.u32() != d) r.fail("shape mismatch for tensor '" + name + "'");
    }
    r.need(4 * t.size());
    for (double& v : t.values) {
        const float f = std::bit_cast<float>(r.u32());
        if (!std::isfinite(f)) r.fail("non-finite value in tensor '" + name + "'");
        v = f;
    }
}

template <typename Fn>
void for_each_named_tensor(NetworkParams& p, Fn&& fn) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l + 1);
        fn(prefix + ".weights", p.layers[l].weights);
        fn(prefix + ".biases", p.layers[l].biases);
    }
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const std::string prefix = "adam.m.layer" + std::to_string(l + 1);
        fn(prefix + ".weights", p.adam.first_moment[l].weights);
        fn(prefix + ".biases", p.adam.first_moment[l].biases);
    }
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const std::string prefix = "adam.v.layer" + std::to_string(l + 1);
        fn(prefix + ".weights", p.adam.second_moment[l].weights);
        fn(prefix + ".biases", p.adam.second_moment[l].biases);
    }
}

}  // namespace

std::vector<std::uint8_t> write_checkpoint(const Checkpoint& checkpoint) {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_u32(out, kCheckpointVersion);
    nlohmann::json descriptor;
    descriptor["architecture"] = checkpoint.arch.to_json();
    descriptor["metadata"] = checkpoint.metadata;
    const std::string text = descriptor.dump();
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());

    NetworkParams& p = const_cast<NetworkParams&>(checkpoint.params);
    std::uint32_t count = 0;
    for_each_named_tensor(p, [&](const std::string&, Tensor&) { ++count; });
    put_u32(out, count);
    for_each_named_tensor(p, [&](const std::string& name, Tensor& t) { put_tensor(out, name, t); });
    put_u64(out, checkpoint.params.adam.step);
    return out;
}

Checkpoint read_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.need(sizeof kCheckpointMagic);
    if (r.str(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
        throw ParseError("not a neurocad checkpoint (bad magic)", 0, ParseError::Unit::byte);
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    const std::string text = r.str(r.u32());
    try {
        const auto descriptor = nlohmann::json::parse(text);
        ck.arch = NetworkArchitecture::from_json(descriptor.at("architecture"));
        ck.metadata = descriptor.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("malformed checkpoint descriptor: ") + e.what());
    }
    ck.params = zero_params(ck.arch);
    std::uint32_t expected = 0;
    for_each_named_tensor(ck.params, [&](const std::string&, Tensor&) { ++expected; });
    if (r.u32() != expected) r.fail("tensor count does not match architecture");
    for_each_named_tensor(ck.params, [&](const std::string& name, Tensor& t) { read_tensor(r, name, t); });
    ck.params.adam.step = r.u64();
    if (!r.done()) r.fail("trailing bytes after checkpoint");
    return ck;
}

}  // namespace neurocad
