#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "flowdup/mlp.hpp"
#include "flowdup/tensor.hpp"

namespace flowdup {

// Set encoder h(X) = h2(mean_x h1(x)). h1 maps an input row to an embedding
// of width e, h2 maps the pooled embedding to subspace coordinates in R^k.
struct HyperNetArch {
    MlpLayout h1;  // [in, hidden..., e]
    MlpLayout h2;  // [e, hidden..., k]
    bool h1_final_relu = false;

    HyperNetArch() = default;
    HyperNetArch(std::size_t input_dim, const std::vector<std::size_t>& h1_hidden,
                 std::size_t embed_dim, const std::vector<std::size_t>& h2_hidden, std::size_t k,
                 bool h1_final_relu = false);

    std::size_t input_dim() const { return h1.input_dim(); }
    std::size_t embed_dim() const { return h1.output_dim(); }
    std::size_t k() const { return h2.output_dim(); }
    std::size_t param_count() const { return h1.param_count() + h2.param_count(); }

    bool operator==(const HyperNetArch&) const = default;
};

// psi_h: the architecture plus its flat parameter vector (h1 block, then h2).
struct HyperNetParams {
    HyperNetArch arch;
    Tensor flat;
};

HyperNetParams init_hypernet(std::size_t input_dim, std::size_t embed_dim, std::size_t k,
                             const std::vector<std::size_t>& h1_hidden, std::uint64_t seed,
                             const std::vector<std::size_t>& h2_hidden = {64},
                             bool h1_final_relu = false);

// r(X): mean of the h1 features over the rows of X. `psi_h` may be a tape leaf.
Tensor embed(const HyperNetArch& arch, const Tensor& psi_h, const Tensor& X);

// v = h2(r(X)).
Tensor hyper_forward(const HyperNetArch& arch, const Tensor& psi_h, const Tensor& X);

inline Tensor embed(const HyperNetParams& params, const Tensor& X) {
    return embed(params.arch, params.flat, X);
}

inline Tensor hyper_forward(const HyperNetParams& params, const Tensor& X) {
    return hyper_forward(params.arch, params.flat, X);
}

}  // namespace flowdup
