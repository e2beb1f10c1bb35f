#include "flowdup/mlp.hpp"

#include <cmath>

#include "flowdup/errors.hpp"
#include "flowdup/rng.hpp"

namespace flowdup {

MlpLayout::MlpLayout(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) {
        throw DimensionError("MLP layout needs at least input and output widths");
    }
    for (std::size_t w : widths_) {
        if (w == 0) {
            throw DimensionError("MLP widths must be positive");
        }
    }
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
        layers_.push_back({widths_[i], widths_[i + 1]});
        param_count_ += layers_.back().param_count();
    }
}

std::vector<LayerParams> unflatten(const Tensor& flat, const MlpLayout& layout,
                                   std::size_t offset) {
    if (flat.rank() != 1 || offset + layout.param_count() > flat.numel()) {
        throw DimensionError("unflatten: " + shape_string(flat.shape()) + " cannot hold " +
                             std::to_string(layout.param_count()) + " parameters at offset " +
                             std::to_string(offset));
    }
    std::vector<LayerParams> out;
    out.reserve(layout.layers().size());
    std::size_t pos = offset;
    for (const LayerShape& layer : layout.layers()) {
        Tensor w = slice(flat, pos, {layer.fan_in, layer.fan_out});
        pos += layer.weight_count();
        Tensor b = slice(flat, pos, {layer.fan_out});
        pos += layer.fan_out;
        out.push_back({std::move(w), std::move(b)});
    }
    return out;
}

Tensor flatten(std::span<const LayerParams> layers) {
    std::vector<double> flat;
    for (const LayerParams& layer : layers) {
        flat.insert(flat.end(), layer.weight.data().begin(), layer.weight.data().end());
        flat.insert(flat.end(), layer.bias.data().begin(), layer.bias.data().end());
    }
    return Tensor::vector(std::move(flat));
}

Tensor mlp_forward(std::span<const LayerParams> layers, const Tensor& x, bool relu_last) {
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = add_bias(matmul(h, layers[i].weight), layers[i].bias);
        if (i + 1 < layers.size() || relu_last) {
            h = relu(h);
        }
    }
    return h;
}

std::vector<double> init_fan_in(const MlpLayout& layout, std::uint64_t seed) {
    std::vector<double> flat;
    flat.reserve(layout.param_count());
    for (std::size_t l = 0; l < layout.layers().size(); ++l) {
        const LayerShape& layer = layout.layers()[l];
        const double limit = std::sqrt(6.0 / static_cast<double>(layer.fan_in));
        Rng rng(derive_seed(seed, l + 1));
        for (std::size_t i = 0; i < layer.weight_count(); ++i) {
            flat.push_back(rng.uniform(-limit, limit));
        }
        flat.insert(flat.end(), layer.fan_out, 0.0);
    }
    return flat;
}

}  // namespace flowdup
