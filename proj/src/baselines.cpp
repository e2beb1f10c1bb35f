#include "flowdup/baselines.hpp"

#include <algorithm>
#include <functional>

#include "flowdup/errors.hpp"

namespace flowdup {

namespace {

struct LossGrad {
    double value;
    std::vector<double> grad;
};

using BatchLossFn = std::function<LossGrad(std::span<const double> params, const Tensor& x,
                                           std::span<const int> y)>;

std::span<const int> require_labels(const ClientDataset& dataset, const char* who) {
    const auto labels = dataset.labels();
    if (!labels) {
        throw ContractError(std::string(who) + ": client " + std::to_string(dataset.id()) +
                            " is unlabeled; baselines train on labeled clients only");
    }
    return *labels;
}

ClientUpdate local_sgd(const ClientDataset& dataset, std::span<const int> labels,
                       std::span<const double> start, const TrainConfig& cfg, Rng& rng,
                       const BatchLossFn& loss) {
    std::vector<double> params(start.begin(), start.end());
    Optimizer opt(cfg.client_optimizer, cfg.local_lr);
    const std::size_t m = dataset.size();
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        const std::vector<std::size_t> order = rng.permutation(m);
        for (std::size_t begin = 0; begin < m; begin += cfg.batch_size) {
            const std::size_t end = std::min(m, begin + cfg.batch_size);
            if (end - begin < 2) {
                continue;
            }
            const std::span<const std::size_t> rows(order.data() + begin, end - begin);
            std::vector<int> y;
            y.reserve(rows.size());
            for (std::size_t r : rows) {
                y.push_back(labels[r]);
            }
            const LossGrad lg = loss(params, gather_rows(dataset.features(), rows), y);
            opt.step(params, lg.grad);
            loss_sum += lg.value;
            ++steps;
        }
    }
    ClientUpdate out;
    out.delta.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        out.delta[i] = params[i] - start[i];
    }
    out.mean_objective = steps > 0 ? loss_sum / static_cast<double>(steps) : 0.0;
    return out;
}

LossGrad theta_loss(std::span<const double> theta, const MlpLayout& layout, const Tensor& x,
                    std::span<const int> y, std::span<const double> anchor, double mu) {
    Tape tape;
    const Tensor t = tape.leaf(Tensor::vector({theta.begin(), theta.end()}));
    Tensor loss = softmax_cross_entropy(mlp_forward(unflatten(t, layout), x), y);
    if (mu > 0.0) {
        const Tensor prox =
            scale(sq_l2(sub(t, Tensor::vector({anchor.begin(), anchor.end()}))), 0.5 * mu);
        loss = add(loss, prox);
    }
    const Gradients g = tape.backward(loss);
    const auto raw = g.raw(t);
    return {loss.item(), {raw.begin(), raw.end()}};
}

}  // namespace

Method parse_method(const std::string& name) {
    if (name == "flowdup") return Method::FLowDUP;
    if (name == "fedavg") return Method::FedAvg;
    if (name == "fedprox") return Method::FedProx;
    if (name == "ldfedavg") return Method::LdFedAvg;
    throw ConfigError("unknown method '" + name +
                      "' (expected flowdup, fedavg, fedprox or ldfedavg)");
}

std::string method_name(Method method) {
    switch (method) {
        case Method::FLowDUP: return "flowdup";
        case Method::FedAvg: return "fedavg";
        case Method::FedProx: return "fedprox";
        case Method::LdFedAvg: return "ldfedavg";
    }
    return "unknown";
}

void GlobalModelState::check(const ExpansionBasis& basis) const {
    std::size_t expected = 0;
    switch (method) {
        case Method::FedAvg:
        case Method::FedProx: expected = basis.d; break;
        case Method::LdFedAvg: expected = basis.k; break;
        case Method::FLowDUP:
            throw ContractError("FLowDUP has no single global model");
    }
    if (params.size() != expected) {
        throw ContractError(method_name(method) + " model expects " + std::to_string(expected) +
                            " parameters, got " + std::to_string(params.size()));
    }
}

ClientUpdate fedavg_client_update(const ClientDataset& dataset, std::span<const double> theta,
                                  const MlpLayout& layout, const TrainConfig& cfg, Rng& rng) {
    return fedprox_client_update(dataset, theta, layout, cfg, rng, 0.0);
}

ClientUpdate fedprox_client_update(const ClientDataset& dataset,
                                   std::span<const double> theta_global, const MlpLayout& layout,
                                   const TrainConfig& cfg, Rng& rng, double mu) {
    if (!(mu >= 0.0)) {
        throw ConfigError("fedprox: mu must be nonnegative");
    }
    const auto labels = require_labels(dataset, mu > 0.0 ? "fedprox" : "fedavg");
    if (theta_global.size() != layout.param_count()) {
        throw DimensionError("client model has " + std::to_string(layout.param_count()) +
                             " parameters, got " + std::to_string(theta_global.size()));
    }
    return local_sgd(dataset, labels, theta_global, cfg, rng,
                     [&](std::span<const double> theta, const Tensor& x, std::span<const int> y) {
                         return theta_loss(theta, layout, x, y, theta_global, mu);
                     });
}

ClientUpdate ldfedavg_client_update(const ClientDataset& dataset, std::span<const double> v,
                                    const ExpansionBasis& basis, const TrainConfig& cfg,
                                    Rng& rng) {
    const auto labels = require_labels(dataset, "ldfedavg");
    if (v.size() != basis.k) {
        throw DimensionError("subspace has dimension " + std::to_string(basis.k) + ", got " +
                             std::to_string(v.size()));
    }
    return local_sgd(
        dataset, labels, v, cfg, rng,
        [&](std::span<const double> cur, const Tensor& x, std::span<const int> y) {
            Tape tape;
            const Tensor vt = tape.leaf(Tensor::vector({cur.begin(), cur.end()}));
            const Tensor loss =
                softmax_cross_entropy(mlp_forward(unflatten(expand(basis, vt), basis.layout), x), y);
            const Gradients g = tape.backward(loss);
            const auto raw = g.raw(vt);
            return LossGrad{loss.item(), {raw.begin(), raw.end()}};
        });
}

BaselineResult train_baseline(const Federation& federation, const TrainConfig& cfg, Method method,
                              const BoundaryObserver& observer) {
    cfg.validate();
    if (method == Method::FLowDUP) {
        throw ContractError("train_baseline: use train() for FLowDUP");
    }
    const ExpansionBasis basis = make_basis(cfg, federation.input_dim, federation.num_classes);

    std::vector<double> initial;
    LocalUpdateFn local;
    if (method == Method::LdFedAvg) {
        initial.assign(basis.k, 0.0);
        local = [&](const ClientDataset& c, std::span<const double> v, Rng& rng) {
            return ldfedavg_client_update(c, v, basis, cfg, rng);
        };
    } else {
        initial = basis.theta0.values();
        const double mu = method == Method::FedProx ? cfg.fedprox_mu : 0.0;
        local = [&, mu](const ClientDataset& c, std::span<const double> theta, Rng& rng) {
            return fedprox_client_update(c, theta, basis.layout, cfg, rng, mu);
        };
    }
    RoundLoopResult loop =
        run_rounds(federation, cfg, std::move(initial), local, /*labeled_only=*/true, observer);
    return {{method, std::move(loop.params)}, std::move(loop.logs)};
}

ClientModel global_model(const GlobalModelState& state, const ExpansionBasis& basis) {
    state.check(basis);
    if (state.method == Method::LdFedAvg) {
        return {basis.layout, expand(basis, Tensor::vector(state.params))};
    }
    return {basis.layout, Tensor::vector(state.params)};
}

}  // namespace flowdup
