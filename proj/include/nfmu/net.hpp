#pragma once

#include "nfmu/types.hpp"

#include <cstdint>
#include <variant>

namespace nfmu {

enum class Activation { Identity, Tanh };

struct DenseLayer {
    int in = 0;
    int out = 0;
    Activation act = Activation::Identity;
    bool bias = true;
};

/// Affine per-channel transform. Trainable: out = scale * (in + shift) with
/// both vectors in the parameter vector. Frozen: the values live in the layer
/// itself and count zero parameters. inverse applies out = in / scale - shift.
struct ShiftScaleLayer {
    int width = 0;
    bool trainable = true;
    bool inverse = false;
    Vec frozen_shift;  // used when !trainable
    Vec frozen_scale;
};

/// Per-channel mixing of the network path with a side input:
/// out = p_ann * in + p_fmu * side. Parameters [p_ann..., p_fmu...].
struct GatesLayer {
    int width = 0;
};

using Layer = std::variant<DenseLayer, ShiftScaleLayer, GatesLayer>;

struct NetSpec {
    std::vector<Layer> layers;

    [[nodiscard]] int input_width() const;
    [[nodiscard]] int output_width() const;
    /// Throws std::invalid_argument when adjacent layer widths are
    /// incompatible.
    void validate() const;
};

[[nodiscard]] int layer_param_count(const Layer& layer);
[[nodiscard]] int count_params(const NetSpec& spec);

/// Flat trainable parameters with per-layer offsets.
struct ParamVector {
    Vec values;
    std::vector<int> offsets;  // one per layer; -1 for parameterless layers

    [[nodiscard]] int size() const { return static_cast<int>(values.size()); }
};

[[nodiscard]] ParamVector make_params(const NetSpec& spec);

/// Uniform +-sqrt(6/(in+out)) dense weights, zero biases, shift 0 / scale 1,
/// gates p_ann = 0 / p_fmu = 1.
void init_params(const NetSpec& spec, ParamVector& params, std::uint64_t seed);

/// Forward activations kept for backward(). Records are reusable buffers.
struct ForwardRecord {
    std::vector<Vec> inputs;   // one per layer
    std::vector<Vec> outputs;  // one per layer
    Vec side;                  // gates side input
    int n_layers = -1;
};

/// Runs the network. side is consumed by Gates layers (zero vector when
/// absent). Returns the output; rec captures what backward() needs.
const Vec& forward(const NetSpec& spec, const ParamVector& params, const Vec& input,
                   const Vec& side, ForwardRecord& rec);

/// Reverse-mode sweep for the recorded forward pass. grad_params accumulates
/// (caller clears). grad_input and grad_side are overwritten.
void backward(const NetSpec& spec, const ParamVector& params, const ForwardRecord& rec,
              const Vec& grad_output, Vec& grad_input, Vec& grad_side, Vec& grad_params);

struct ShiftScaleStats {
    Vec shift;
    Vec scale;
    std::vector<int> degenerate_channels;  // zero-variance inputs, scale forced to 1
};

/// shift = -mean, scale = 1/std (population convention) per channel so that
/// scale * (x + shift) is standard normal over the samples. Zero-variance
/// channels get scale 1 and are reported (and warned to stderr).
[[nodiscard]] ShiftScaleStats shift_scale_from_stats(const std::vector<Vec>& samples);

void write_params(const std::string& path, const ParamVector& params);
[[nodiscard]] ParamVector read_params(const std::string& path, const NetSpec& spec);
[[nodiscard]] std::string describe(const NetSpec& spec);

}  // namespace nfmu
