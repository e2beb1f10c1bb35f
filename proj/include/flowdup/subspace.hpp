#pragma once

#include <cstddef>
#include <cstdint>

#include "flowdup/mlp.hpp"
#include "flowdup/tensor.hpp"

namespace flowdup {

// Fixed random affine subspace theta = theta0 + P v of the client model's
// parameter space. Reproducible from (d, k, seed, layout, column_normalized),
// so it never has to be transmitted.
struct ExpansionBasis {
    std::size_t d = 0;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    bool column_normalized = true;
    MlpLayout layout;  // structure of the client model f
    Tensor P;          // d x k
    Tensor theta0;     // d

    // Assembles a basis from explicit parts (fixtures, identity bases).
    static ExpansionBasis from_parts(Tensor P, Tensor theta0, MlpLayout layout);
};

// P has i.i.d. standard normal entries (unit-norm columns when
// `column_normalized`); theta0 uses the fan-in scheme of init_fan_in.
ExpansionBasis build_basis(std::size_t d, std::size_t k, std::uint64_t seed,
                           const MlpLayout& layout, bool column_normalized = true);

// theta0 + P v. Differentiable in v.
Tensor expand(const ExpansionBasis& basis, const Tensor& v);

}  // namespace flowdup
