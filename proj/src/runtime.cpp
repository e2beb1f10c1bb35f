#include "flowdup/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iostream>
#include <mutex>
#include <thread>

#include "flowdup/errors.hpp"

namespace flowdup {

namespace {
constexpr std::uint64_t kBasisStream = 0x42415349ULL;   // "BASI"
constexpr std::uint64_t kHyperStream = 0x48595045ULL;   // "HYPE"
constexpr std::uint64_t kCohortStream = 0x434f484fULL;  // "COHO"
constexpr std::uint64_t kClientStream = 0x434c4945ULL;  // "CLIE"
}  // namespace

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") {
        return OptimizerKind::Sgd;
    }
    if (name == "adam") {
        return OptimizerKind::Adam;
    }
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double lr, double weight_decay)
    : kind_(kind), lr_(lr), weight_decay_(weight_decay) {}

void Optimizer::step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != grad.size()) {
        throw ContractError("optimizer: " + std::to_string(grad.size()) + " gradients for " +
                            std::to_string(params.size()) + " parameters");
    }
    if (weight_decay_ > 0.0) {
        for (double& p : params) {
            p -= lr_ * weight_decay_ * p;
        }
    }
    if (kind_ == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            params[i] -= lr_ * grad[i];
        }
        return;
    }
    if (m_.empty()) {
        m_.assign(params.size(), 0.0);
        v_.assign(params.size(), 0.0);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
        v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        const double m_hat = m_[i] / c1;
        const double v_hat = v_[i] / c2;
        params[i] -= lr_ * m_hat / (std::sqrt(v_hat) + kEpsilon);
    }
}

void TrainConfig::validate() const {
    std::vector<std::string> problems;
    if (rounds < 1) problems.push_back("rounds must be >= 1");
    if (cohort_size < 1) problems.push_back("cohort_size must be >= 1");
    if (local_epochs < 1) problems.push_back("local_epochs must be >= 1");
    if (batch_size < 2) problems.push_back("batch_size must be >= 2");
    if (!(local_lr >= 0.0)) problems.push_back("local_lr must be nonnegative");
    if (!(global_lr > 0.0)) problems.push_back("global_lr must be positive");
    if (!(labeled_fraction >= 0.0 && labeled_fraction <= 1.0)) {
        problems.push_back("labeled_fraction must lie in [0, 1]");
    }
    if (!(lambda >= 0.0)) problems.push_back("lambda must be nonnegative");
    if (k < 1) problems.push_back("k must be >= 1");
    if (embed_dim < 1) problems.push_back("embed_dim must be >= 1");
    if (!(fedprox_mu >= 0.0)) problems.push_back("fedprox_mu must be nonnegative");
    if (!(weight_decay >= 0.0)) problems.push_back("weight_decay must be nonnegative");
    if (num_workers < 1) problems.push_back("num_workers must be >= 1");
    if (!problems.empty()) {
        std::string msg = "invalid training configuration:";
        for (const auto& p : problems) {
            msg += " " + p + ";";
        }
        throw ConfigError(msg);
    }
}

MlpLayout client_model_layout(const TrainConfig& cfg, std::size_t input_dim,
                              std::size_t num_classes) {
    std::vector<std::size_t> widths{input_dim};
    widths.insert(widths.end(), cfg.f_hidden.begin(), cfg.f_hidden.end());
    widths.push_back(num_classes);
    return MlpLayout(std::move(widths));
}

ExpansionBasis make_basis(const TrainConfig& cfg, std::size_t input_dim, std::size_t num_classes) {
    const MlpLayout layout = client_model_layout(cfg, input_dim, num_classes);
    return build_basis(layout.param_count(), cfg.k, derive_seed(cfg.seed, kBasisStream), layout,
                       cfg.column_normalized);
}

HyperNetParams make_hypernet(const TrainConfig& cfg, std::size_t input_dim) {
    return init_hypernet(input_dim, cfg.embed_dim, cfg.k, cfg.h1_hidden,
                         derive_seed(cfg.seed, kHyperStream), cfg.h2_hidden, cfg.h1_final_relu);
}

std::vector<std::size_t> sample_cohort(const Federation& federation, const TrainConfig& cfg,
                                       Rng& rng, bool labeled_only, bool* clamped) {
    std::vector<std::size_t> labeled, unlabeled;
    for (std::size_t i = 0; i < federation.clients.size(); ++i) {
        (federation.clients[i].labeled() ? labeled : unlabeled).push_back(i);
    }
    const std::size_t size = cfg.cohort_size;
    const bool only_labeled = labeled_only || !cfg.use_unlabeled_clients;

    std::size_t n_labeled = size;
    if (!only_labeled) {
        n_labeled = static_cast<std::size_t>(
            std::ceil(cfg.labeled_fraction * static_cast<double>(size) - 1e-9));
        n_labeled = std::min(n_labeled, size);
    }
    std::size_t n_unlabeled = size - n_labeled;
    if (n_unlabeled > unlabeled.size()) {
        n_unlabeled = unlabeled.size();
        n_labeled = size - n_unlabeled;
        if (clamped) {
            *clamped = true;
        }
    }
    if (n_labeled > labeled.size()) {
        throw ConfigError("cohort needs " + std::to_string(n_labeled) +
                          " labeled clients but the federation has " +
                          std::to_string(labeled.size()));
    }

    std::vector<std::size_t> cohort;
    for (std::size_t pick : rng.sample_without_replacement(labeled.size(), n_labeled)) {
        cohort.push_back(labeled[pick]);
    }
    for (std::size_t pick : rng.sample_without_replacement(unlabeled.size(), n_unlabeled)) {
        cohort.push_back(unlabeled[pick]);
    }
    std::sort(cohort.begin(), cohort.end(), [&](std::size_t a, std::size_t b) {
        return federation.clients[a].id() < federation.clients[b].id();
    });
    return cohort;
}

ClientUpdate client_update(const ClientDataset& dataset, const LearnableState& state,
                           const ExpansionBasis& basis, const TrainConfig& cfg, Rng& rng) {
    LearnableState local = state;
    std::vector<double> params = state.flatten();
    const std::vector<double> start = params;
    Optimizer opt(cfg.client_optimizer, cfg.local_lr);

    const std::size_t m = dataset.size();
    const auto labels = dataset.labels();
    double objective_sum = 0.0, reg_sum = 0.0;
    std::size_t steps = 0;

    for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        const std::vector<std::size_t> order = rng.permutation(m);
        for (std::size_t begin = 0; begin < m; begin += cfg.batch_size) {
            const std::size_t end = std::min(m, begin + cfg.batch_size);
            if (end - begin < 2) {
                continue;
            }
            const std::span<const std::size_t> rows(order.data() + begin, end - begin);
            const Tensor batch_x = gather_rows(dataset.features(), rows);
            std::optional<std::vector<int>> batch_y;
            if (labels) {
                batch_y.emplace();
                for (std::size_t r : rows) {
                    batch_y->push_back((*labels)[r]);
                }
            }
            const SplitBatch split =
                batch_y ? split_batch(batch_x, std::span<const int>(*batch_y), rng)
                        : split_batch(batch_x, std::nullopt, rng);
            const ObjectiveValue obj = total_objective(local, basis, split, cfg.learnable_reg);
            opt.step(params, obj.gradient);
            local.assign(params);
            objective_sum += obj.value;
            reg_sum += obj.reg;
            ++steps;
        }
    }

    ClientUpdate out;
    out.delta.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        out.delta[i] = params[i] - start[i];
    }
    if (steps > 0) {
        out.mean_objective = objective_sum / static_cast<double>(steps);
        out.mean_reg = reg_sum / static_cast<double>(steps);
    }
    return out;
}

std::vector<double> aggregate(std::span<const std::vector<double>> updates) {
    if (updates.empty()) {
        throw ContractError("aggregate: no client updates");
    }
    const std::size_t n = updates.front().size();
    std::vector<double> mean(n, 0.0);
    for (const auto& u : updates) {
        if (u.size() != n) {
            throw ContractError("aggregate: update lengths differ (" + std::to_string(u.size()) +
                                " vs " + std::to_string(n) + ")");
        }
        for (std::size_t i = 0; i < n; ++i) {
            mean[i] += u[i];
        }
    }
    const double inv = 1.0 / static_cast<double>(updates.size());
    for (double& x : mean) {
        x *= inv;
    }
    return mean;
}

void server_step(std::vector<double>& params, std::span<const double> delta, Optimizer& opt) {
    if (delta.size() != params.size()) {
        throw ContractError("server_step: update length " + std::to_string(delta.size()) +
                            " does not match " + std::to_string(params.size()) + " parameters");
    }
    std::vector<double> pseudo_grad(delta.size());
    for (std::size_t i = 0; i < delta.size(); ++i) {
        pseudo_grad[i] = -delta[i];
    }
    opt.step(params, pseudo_grad);
}

LearnableState server_step(const LearnableState& state, std::span<const double> delta,
                           Optimizer& opt) {
    std::vector<double> params = state.flatten();
    server_step(params, delta, opt);
    LearnableState next = state;
    next.assign(params);
    return next;
}

RoundLoopResult run_rounds(const Federation& federation, const TrainConfig& cfg,
                           std::vector<double> initial, const LocalUpdateFn& local_update,
                           bool labeled_only, const BoundaryObserver& observer) {
    cfg.validate();
    RoundLoopResult result;
    result.params = std::move(initial);
    Optimizer server_opt(cfg.server_optimizer, cfg.global_lr, cfg.weight_decay);
    bool warned = false;

    for (std::size_t round = 1; round <= cfg.rounds; ++round) {
        const auto started = std::chrono::steady_clock::now();
        Rng cohort_rng(derive_seed(cfg.seed, kCohortStream, round));
        bool clamped = false;
        const std::vector<std::size_t> cohort =
            sample_cohort(federation, cfg, cohort_rng, labeled_only, &clamped);
        if (clamped && !warned) {
            std::clog << "warning: too few unlabeled clients for the requested cohort; "
                         "filling with labeled clients\n";
            warned = true;
        }

        const std::vector<double>& broadcast = result.params;
        std::vector<ClientUpdate> updates(cohort.size());
        auto run_client = [&](std::size_t slot) {
            const ClientDataset& client = federation.clients[cohort[slot]];
            Rng rng(derive_seed(cfg.seed, kClientStream,
                                derive_seed(round, static_cast<std::uint64_t>(client.id()))));
            updates[slot] = local_update(client, broadcast, rng);
        };

        if (observer) {
            for (std::size_t idx : cohort) {
                observer({BoundaryEvent::Direction::ToClient, round, federation.clients[idx].id(),
                          broadcast});
            }
        }
        if (cfg.num_workers > 1 && cohort.size() > 1) {
            std::atomic<std::size_t> next{0};
            std::vector<std::thread> workers;
            const std::size_t n_threads = std::min(cfg.num_workers, cohort.size());
            std::exception_ptr failure;
            std::mutex failure_mutex;
            for (std::size_t w = 0; w < n_threads; ++w) {
                workers.emplace_back([&] {
                    for (std::size_t slot = next++; slot < cohort.size(); slot = next++) {
                        try {
                            run_client(slot);
                        } catch (...) {
                            std::lock_guard lock(failure_mutex);
                            if (!failure) {
                                failure = std::current_exception();
                            }
                        }
                    }
                });
            }
            for (auto& worker : workers) {
                worker.join();
            }
            if (failure) {
                std::rethrow_exception(failure);
            }
        } else {
            for (std::size_t slot = 0; slot < cohort.size(); ++slot) {
                run_client(slot);
            }
        }

        std::vector<std::vector<double>> deltas;
        deltas.reserve(updates.size());
        RoundLog log;
        log.round = round;
        for (std::size_t slot = 0; slot < cohort.size(); ++slot) {
            const ClientDataset& client = federation.clients[cohort[slot]];
            if (observer) {
                observer({BoundaryEvent::Direction::ToServer, round, client.id(),
                          updates[slot].delta});
            }
            log.cohort_ids.push_back(client.id());
            log.n_labeled_in_cohort += client.labeled() ? 1 : 0;
            log.mean_objective += updates[slot].mean_objective;
            log.mean_reg += updates[slot].mean_reg;
            deltas.push_back(std::move(updates[slot].delta));
        }
        log.mean_objective /= static_cast<double>(cohort.size());
        log.mean_reg /= static_cast<double>(cohort.size());

        server_step(result.params, aggregate(deltas), server_opt);

        double norm = 0.0;
        for (double p : result.params) {
            if (!std::isfinite(p)) {
                throw NumericError("non-finite parameter after round " + std::to_string(round));
            }
            norm += p * p;
        }
        log.param_norm = std::sqrt(norm);
        log.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - started)
                          .count();
        result.logs.push_back(std::move(log));
    }
    return result;
}

TrainResult train(const Federation& federation, const TrainConfig& cfg,
                  const BoundaryObserver& observer) {
    cfg.validate();
    const ExpansionBasis basis =
        make_basis(cfg, federation.input_dim, federation.num_classes);
    const LearnableState initial =
        LearnableState::initial(make_hypernet(cfg, federation.input_dim), cfg.lambda);

    auto local = [&](const ClientDataset& client, std::span<const double> params, Rng& rng) {
        LearnableState received = initial;
        received.assign(params);
        return client_update(client, received, basis, cfg, rng);
    };
    RoundLoopResult loop =
        run_rounds(federation, cfg, initial.flatten(), local, /*labeled_only=*/false, observer);

    TrainResult result{initial, std::move(loop.logs)};
    result.state.assign(loop.params);
    return result;
}

Tensor ClientModel::logits(const Tensor& X) const {
    return mlp_forward(unflatten(theta, layout), X);
}

std::vector<int> ClientModel::predict(const Tensor& X) const { return argmax_rows(logits(X)); }

ClientModel generate_model(const LearnableState& state, const ExpansionBasis& basis,
                           const Tensor& X) {
    const Tensor v = hyper_forward(state.arch, Tensor::vector(state.hyper), X);
    return {basis.layout, expand(basis, v)};
}

}  // namespace flowdup
