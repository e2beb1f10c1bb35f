#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flowdup/tensor.hpp"

namespace flowdup {

struct LayerShape {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;

    std::size_t weight_count() const { return fan_in * fan_out; }
    std::size_t param_count() const { return fan_in * fan_out + fan_out; }
};

// Fully connected stack described by its widths [in, hidden..., out]. Flat
// parameter vectors store, per layer, the weight matrix (fan_in x fan_out,
// row-major) followed by the bias.
class MlpLayout {
public:
    MlpLayout() = default;
    explicit MlpLayout(std::vector<std::size_t> widths);

    const std::vector<std::size_t>& widths() const { return widths_; }
    const std::vector<LayerShape>& layers() const { return layers_; }
    std::size_t input_dim() const { return widths_.front(); }
    std::size_t output_dim() const { return widths_.back(); }
    std::size_t param_count() const { return param_count_; }

    bool operator==(const MlpLayout& other) const { return widths_ == other.widths_; }

private:
    std::vector<std::size_t> widths_;
    std::vector<LayerShape> layers_;
    std::size_t param_count_ = 0;
};

struct LayerParams {
    Tensor weight;  // fan_in x fan_out
    Tensor bias;    // fan_out
};

// Views `layout.param_count()` entries of `flat` starting at `offset` as layers.
// Differentiable: gradients flow back into `flat`.
std::vector<LayerParams> unflatten(const Tensor& flat, const MlpLayout& layout,
                                   std::size_t offset = 0);

// Inverse of unflatten (untracked).
Tensor flatten(std::span<const LayerParams> layers);

// ReLU between layers; the last layer is linear unless `relu_last` is set.
Tensor mlp_forward(std::span<const LayerParams> layers, const Tensor& x, bool relu_last = false);

// Per-layer uniform weights in +-sqrt(6 / fan_in), zero biases. Layer l draws
// from the stream derive_seed(seed, l + 1).
std::vector<double> init_fan_in(const MlpLayout& layout, std::uint64_t seed);

}  // namespace flowdup
