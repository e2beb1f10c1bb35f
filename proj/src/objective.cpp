#include "flowdup/objective.hpp"

#include "flowdup/errors.hpp"

namespace flowdup {

LearnableState LearnableState::initial(const HyperNetParams& hyper, double lambda) {
    if (lambda < 0.0) {
        throw ConfigError("regularization strength must be nonnegative");
    }
    LearnableState state;
    state.arch = hyper.arch;
    state.hyper = hyper.flat.values();
    state.reg.assign(hyper.arch.k(), 0.0);
    state.lambda = lambda;
    return state;
}

std::vector<double> LearnableState::flatten() const {
    std::vector<double> flat;
    flat.reserve(size());
    flat.insert(flat.end(), hyper.begin(), hyper.end());
    flat.insert(flat.end(), reg.begin(), reg.end());
    return flat;
}

void LearnableState::assign(std::span<const double> flat) {
    if (flat.size() != size()) {
        throw ContractError("state expects " + std::to_string(size()) + " values, got " +
                            std::to_string(flat.size()));
    }
    std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(hyper.size()),
              hyper.begin());
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(hyper.size()), flat.end(), reg.begin());
}

SplitBatch split_batch(const Tensor& batch_x, std::optional<std::span<const int>> batch_y,
                       Rng& rng) {
    const std::size_t b = batch_x.rows();
    if (b < 2) {
        throw EmptyBatchError("split_batch: a batch of " + std::to_string(b) +
                              " rows cannot form both halves");
    }
    if (batch_y && batch_y->size() != b) {
        throw DimensionError("split_batch: " + std::to_string(batch_y->size()) + " labels for " +
                             std::to_string(b) + " rows");
    }
    const std::vector<std::size_t> order = rng.permutation(b);
    const std::size_t gen_rows = b / 2;
    const std::span<const std::size_t> gen(order.data(), gen_rows);
    const std::span<const std::size_t> eval(order.data() + gen_rows, b - gen_rows);

    SplitBatch split{gather_rows(batch_x, gen), gather_rows(batch_x, eval), std::nullopt};
    if (batch_y) {
        std::vector<int> labels;
        labels.reserve(eval.size());
        for (std::size_t r : eval) {
            labels.push_back((*batch_y)[r]);
        }
        split.eval_labels = std::move(labels);
    }
    return split;
}

namespace {

Tensor loss_from_v(const Tensor& v, const ExpansionBasis& basis, const SplitBatch& split) {
    if (!split.eval_labels) {
        return Tensor::scalar(0.0);
    }
    const Tensor theta = expand(basis, v);
    const auto layers = unflatten(theta, basis.layout);
    return softmax_cross_entropy(mlp_forward(layers, split.eval_half), *split.eval_labels);
}

}  // namespace

Tensor labeled_loss(const HyperNetArch& arch, const Tensor& psi_h, const ExpansionBasis& basis,
                    const SplitBatch& split) {
    if (!split.eval_labels) {
        return Tensor::scalar(0.0);
    }
    return loss_from_v(hyper_forward(arch, psi_h, split.gen_half), basis, split);
}

Tensor regularizer(const HyperNetArch& arch, const Tensor& psi_h, const Tensor& psi_r,
                   const SplitBatch& split) {
    return sq_l2(sub(hyper_forward(arch, psi_h, split.gen_half), psi_r));
}

ObjectiveValue total_objective(const LearnableState& state, const ExpansionBasis& basis,
                               const SplitBatch& split, bool learnable_reg) {
    if (state.arch.k() != basis.k || state.reg.size() != basis.k) {
        throw DimensionError("state and basis disagree on the subspace dimension");
    }
    Tape tape;
    const Tensor psi = tape.leaf(Tensor::vector(state.flatten()));
    const std::size_t nh = state.hyper.size();
    const Tensor psi_h = slice(psi, 0, {nh});
    const Tensor v = hyper_forward(state.arch, psi_h, split.gen_half);

    const Tensor loss = loss_from_v(v, basis, split);
    const Tensor omega =
        learnable_reg ? sq_l2(sub(v, slice(psi, nh, {state.reg.size()}))) : sq_l2(v);
    const Tensor total = add(loss, scale(omega, state.lambda));

    ObjectiveValue out;
    out.value = total.item();
    out.loss = loss.item();
    out.reg = omega.item();
    const Gradients grads = tape.backward(total);
    const auto grad = grads.raw(psi);
    out.gradient.assign(grad.begin(), grad.end());
    if (out.gradient.empty()) {
        out.gradient.assign(psi.numel(), 0.0);
    }
    return out;
}

}  // namespace flowdup
