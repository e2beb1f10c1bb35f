#include "flowdup/subspace.hpp"

#include <cmath>

#include "flowdup/errors.hpp"
#include "flowdup/rng.hpp"

namespace flowdup {

namespace {
constexpr std::uint64_t kProjectionStream = 0x50524f4aULL;  // "PROJ"
constexpr std::uint64_t kInitStream = 0x494e4954ULL;        // "INIT"
}  // namespace

ExpansionBasis ExpansionBasis::from_parts(Tensor P, Tensor theta0, MlpLayout layout) {
    if (P.rank() != 2 || theta0.rank() != 1 || P.rows() != theta0.numel()) {
        throw DimensionError("basis parts disagree: P " + shape_string(P.shape()) + ", theta0 " +
                             shape_string(theta0.shape()));
    }
    if (layout.param_count() != P.rows()) {
        throw DimensionError("layout holds " + std::to_string(layout.param_count()) +
                             " parameters but d = " + std::to_string(P.rows()));
    }
    ExpansionBasis basis;
    basis.d = P.rows();
    basis.k = P.cols();
    basis.column_normalized = false;
    basis.layout = std::move(layout);
    basis.P = std::move(P);
    basis.theta0 = std::move(theta0);
    return basis;
}

ExpansionBasis build_basis(std::size_t d, std::size_t k, std::uint64_t seed,
                           const MlpLayout& layout, bool column_normalized) {
    if (d == 0 || k == 0) {
        throw DimensionError("build_basis: dimensions must be positive (d = " + std::to_string(d) +
                             ", k = " + std::to_string(k) + ")");
    }
    if (k > d) {
        throw DimensionError("build_basis: subspace dimension k = " + std::to_string(k) +
                             " exceeds d = " + std::to_string(d));
    }
    if (layout.param_count() != d) {
        throw DimensionError("build_basis: layout holds " + std::to_string(layout.param_count()) +
                             " parameters but d = " + std::to_string(d));
    }

    std::vector<double> p(d * k);
    Rng rng(derive_seed(seed, kProjectionStream));
    for (double& x : p) {
        x = rng.normal();
    }
    if (column_normalized) {
        for (std::size_t j = 0; j < k; ++j) {
            double norm = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                norm += p[i * k + j] * p[i * k + j];
            }
            norm = std::sqrt(norm);
            for (std::size_t i = 0; i < d; ++i) {
                p[i * k + j] /= norm;
            }
        }
    }

    ExpansionBasis basis;
    basis.d = d;
    basis.k = k;
    basis.seed = seed;
    basis.column_normalized = column_normalized;
    basis.layout = layout;
    basis.P = Tensor::matrix(d, k, std::move(p));
    basis.theta0 = Tensor::vector(init_fan_in(layout, derive_seed(seed, kInitStream)));
    return basis;
}

Tensor expand(const ExpansionBasis& basis, const Tensor& v) {
    if (v.rank() != 1 || v.numel() != basis.k) {
        throw DimensionError("expand: v has shape " + shape_string(v.shape()) + ", expected [" +
                             std::to_string(basis.k) + "]");
    }
    return add(basis.theta0, matvec(basis.P, v));
}

}  // namespace flowdup
