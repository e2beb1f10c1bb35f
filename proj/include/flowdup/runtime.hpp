#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "flowdup/federation.hpp"
#include "flowdup/hypernet.hpp"
#include "flowdup/objective.hpp"
#include "flowdup/rng.hpp"
#include "flowdup/subspace.hpp"

namespace flowdup {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

// Gradient step on a flat parameter vector. Weight decay is decoupled
// (params shrink by lr * weight_decay before the gradient step).
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, double weight_decay = 0.0);

    void step(std::span<double> params, std::span<const double> grad);

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

private:
    OptimizerKind kind_;
    double lr_;
    double weight_decay_;
    std::size_t t_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

struct TrainConfig {
    std::size_t rounds = 300;
    std::size_t cohort_size = 10;
    double labeled_fraction = 0.9;
    std::size_t local_epochs = 1;
    std::size_t batch_size = 50;
    double local_lr = 0.1;
    double global_lr = 1.0;
    double lambda = 0.01;
    std::size_t k = 64;
    std::uint64_t seed = 0;
    OptimizerKind client_optimizer = OptimizerKind::Sgd;
    OptimizerKind server_optimizer = OptimizerKind::Sgd;
    double weight_decay = 0.0;
    bool use_unlabeled_clients = true;
    bool learnable_reg = true;
    double fedprox_mu = 1.0;

    std::vector<std::size_t> f_hidden{32};
    std::vector<std::size_t> h1_hidden{64, 64};
    std::size_t embed_dim = 32;
    std::vector<std::size_t> h2_hidden{64};
    bool h1_final_relu = false;
    bool column_normalized = true;

    std::size_t num_workers = 1;

    void validate() const;
};

// f: [input_dim, f_hidden..., num_classes].
MlpLayout client_model_layout(const TrainConfig& cfg, std::size_t input_dim,
                              std::size_t num_classes);
// Shared by FLowDUP and LD-FedAvg: derived from cfg.seed only.
ExpansionBasis make_basis(const TrainConfig& cfg, std::size_t input_dim, std::size_t num_classes);
HyperNetParams make_hypernet(const TrainConfig& cfg, std::size_t input_dim);

struct RoundLog {
    std::size_t round = 0;
    double mean_objective = 0.0;
    double mean_reg = 0.0;
    std::size_t n_labeled_in_cohort = 0;
    std::vector<int> cohort_ids;
    double wall_ms = 0.0;
    double param_norm = 0.0;
};

// Indices into federation.clients, ordered by client id. ceil(alpha * |C|)
// labeled clients and the rest unlabeled; when unlabeled clients run short the
// remainder is filled with labeled ones and `*clamped` is set.
std::vector<std::size_t> sample_cohort(const Federation& federation, const TrainConfig& cfg,
                                       Rng& rng, bool labeled_only = false,
                                       bool* clamped = nullptr);

// Client -> server payload. `delta` is the protocol message; the two means are
// simulation telemetry for the round log.
struct ClientUpdate {
    std::vector<double> delta;
    double mean_objective = 0.0;
    double mean_reg = 0.0;
};

// Runs local_epochs passes of B-sized batches over the client's data with one
// optimizer step per batch on a local copy of psi; returns psi_final - psi_start.
ClientUpdate client_update(const ClientDataset& dataset, const LearnableState& state,
                           const ExpansionBasis& basis, const TrainConfig& cfg, Rng& rng);

// Arithmetic mean, accumulated in list order.
std::vector<double> aggregate(std::span<const std::vector<double>> updates);

// Applies -delta as a pseudo-gradient.
void server_step(std::vector<double>& params, std::span<const double> delta, Optimizer& opt);
LearnableState server_step(const LearnableState& state, std::span<const double> delta,
                           Optimizer& opt);

struct BoundaryEvent {
    enum class Direction { ToClient, ToServer };
    Direction direction;
    std::size_t round;
    int client_id;
    std::span<const double> payload;
};
using BoundaryObserver = std::function<void(const BoundaryEvent&)>;

// The client side of a round: sees only its own dataset, the broadcast
// parameters and its private random stream.
using LocalUpdateFn =
    std::function<ClientUpdate(const ClientDataset&, std::span<const double>, Rng&)>;

struct RoundLoopResult {
    std::vector<double> params;
    std::vector<RoundLog> logs;
};

// sample -> local updates -> aggregate -> server step, for cfg.rounds rounds.
// Client streams derive from (seed, round, client id), so results do not
// depend on cfg.num_workers.
RoundLoopResult run_rounds(const Federation& federation, const TrainConfig& cfg,
                           std::vector<double> initial, const LocalUpdateFn& local_update,
                           bool labeled_only, const BoundaryObserver& observer = {});

struct TrainResult {
    LearnableState state;
    std::vector<RoundLog> logs;
};

TrainResult train(const Federation& federation, const TrainConfig& cfg,
                  const BoundaryObserver& observer = {});

// A concrete client model f(.; theta).
struct ClientModel {
    MlpLayout layout;
    Tensor theta;

    Tensor logits(const Tensor& X) const;
    std::vector<int> predict(const Tensor& X) const;
};

// theta = theta0 + P h(X; psi_h), using every row of X.
ClientModel generate_model(const LearnableState& state, const ExpansionBasis& basis,
                           const Tensor& X);

}  // namespace flowdup
