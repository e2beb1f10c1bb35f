#include "flowdup/hypernet.hpp"

#include "flowdup/errors.hpp"
#include "flowdup/rng.hpp"

namespace flowdup {

namespace {

std::vector<std::size_t> widths_of(std::size_t in, const std::vector<std::size_t>& hidden,
                                   std::size_t out) {
    std::vector<std::size_t> widths{in};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(out);
    return widths;
}

void check_params(const HyperNetArch& arch, const Tensor& psi_h) {
    if (psi_h.rank() != 1 || psi_h.numel() != arch.param_count()) {
        throw DimensionError("hypernetwork expects " + std::to_string(arch.param_count()) +
                             " parameters, got " + shape_string(psi_h.shape()));
    }
}

}  // namespace

HyperNetArch::HyperNetArch(std::size_t input_dim, const std::vector<std::size_t>& h1_hidden,
                           std::size_t embed_dim, const std::vector<std::size_t>& h2_hidden,
                           std::size_t k, bool h1_final_relu)
    : h1(widths_of(input_dim, h1_hidden, embed_dim)),
      h2(widths_of(embed_dim, h2_hidden, k)),
      h1_final_relu(h1_final_relu) {}

HyperNetParams init_hypernet(std::size_t input_dim, std::size_t embed_dim, std::size_t k,
                             const std::vector<std::size_t>& h1_hidden, std::uint64_t seed,
                             const std::vector<std::size_t>& h2_hidden, bool h1_final_relu) {
    HyperNetArch arch(input_dim, h1_hidden, embed_dim, h2_hidden, k, h1_final_relu);
    std::vector<double> flat = init_fan_in(arch.h1, derive_seed(seed, 1));
    std::vector<double> tail = init_fan_in(arch.h2, derive_seed(seed, 2));
    flat.insert(flat.end(), tail.begin(), tail.end());
    return {std::move(arch), Tensor::vector(std::move(flat))};
}

Tensor embed(const HyperNetArch& arch, const Tensor& psi_h, const Tensor& X) {
    check_params(arch, psi_h);
    if (X.rank() != 2) {
        throw DimensionError("hypernetwork input must be a matrix, got " + shape_string(X.shape()));
    }
    if (X.cols() != arch.input_dim()) {
        throw DimensionError("hypernetwork input width " + std::to_string(X.cols()) +
                             ", expected " + std::to_string(arch.input_dim()));
    }
    const auto h1 = unflatten(psi_h, arch.h1, 0);
    return mean_rows(mlp_forward(h1, X, arch.h1_final_relu));
}

Tensor hyper_forward(const HyperNetArch& arch, const Tensor& psi_h, const Tensor& X) {
    const Tensor r = embed(arch, psi_h, X);
    const auto h2 = unflatten(psi_h, arch.h2, arch.h1.param_count());
    const Tensor row = reshape(r, {1, arch.embed_dim()});
    return reshape(mlp_forward(h2, row), {arch.k()});
}

}  // namespace flowdup
