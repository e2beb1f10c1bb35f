#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "flowdup/hypernet.hpp"
#include "flowdup/rng.hpp"
#include "flowdup/subspace.hpp"
#include "flowdup/tensor.hpp"

namespace flowdup {

// psi = (psi_h, psi_r) plus the regularization strength. This is the only
// object the server sends to clients; it travels as flatten().
struct LearnableState {
    HyperNetArch arch;
    std::vector<double> hyper;  // psi_h
    std::vector<double> reg;    // psi_r, length k
    double lambda = 0.01;

    static LearnableState initial(const HyperNetParams& hyper, double lambda);

    std::size_t size() const { return hyper.size() + reg.size(); }
    std::vector<double> flatten() const;
    // Replaces psi from a flat vector laid out as [psi_h, psi_r].
    void assign(std::span<const double> flat);

    HyperNetParams hypernet() const { return {arch, Tensor::vector(hyper)}; }
};

// One local batch split into a generation half (no labels needed) and an
// evaluation half that carries the labels when the client has them.
struct SplitBatch {
    Tensor gen_half;
    Tensor eval_half;
    std::optional<std::vector<int>> eval_labels;
};

// Random permutation, then the first floor(b/2) rows generate the model and
// the remaining ceil(b/2) rows evaluate it.
SplitBatch split_batch(const Tensor& batch_x, std::optional<std::span<const int>> batch_y,
                       Rng& rng);

// Mean cross-entropy of f(.; theta0 + P h(gen_half)) on the labeled eval half;
// an untracked exact 0 when the split has no labels.
Tensor labeled_loss(const HyperNetArch& arch, const Tensor& psi_h, const ExpansionBasis& basis,
                    const SplitBatch& split);

// ||h(gen_half) - psi_r||^2.
Tensor regularizer(const HyperNetArch& arch, const Tensor& psi_h, const Tensor& psi_r,
                   const SplitBatch& split);

struct ObjectiveValue {
    double value = 0.0;           // L + lambda * Omega
    double loss = 0.0;            // L
    double reg = 0.0;             // Omega
    std::vector<double> gradient; // over flatten(state)
};

// L + lambda * Omega and its gradient over the whole flat psi. With
// `learnable_reg` off, psi_r is treated as the zero vector and receives no
// gradient.
ObjectiveValue total_objective(const LearnableState& state, const ExpansionBasis& basis,
                               const SplitBatch& split, bool learnable_reg = true);

}  // namespace flowdup
