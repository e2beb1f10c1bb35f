#pragma once

#include <span>
#include <string>
#include <vector>

#include "flowdup/federation.hpp"
#include "flowdup/runtime.hpp"
#include "flowdup/subspace.hpp"

namespace flowdup {

enum class Method { FLowDUP, FedAvg, FedProx, LdFedAvg };

Method parse_method(const std::string& name);
std::string method_name(Method method);

// A single global model: full theta (FedAvg, FedProx) or subspace v (LD-FedAvg).
struct GlobalModelState {
    Method method = Method::FedAvg;
    std::vector<double> params;

    // Throws ContractError when params does not match the method's dimension.
    void check(const ExpansionBasis& basis) const;
};

// E epochs of mean cross-entropy over B-batches; returns theta_final - theta_start.
ClientUpdate fedavg_client_update(const ClientDataset& dataset, std::span<const double> theta,
                                  const MlpLayout& layout, const TrainConfig& cfg, Rng& rng);

// As fedavg with (mu / 2) ||theta - theta_global||^2 added to every batch loss.
ClientUpdate fedprox_client_update(const ClientDataset& dataset,
                                   std::span<const double> theta_global, const MlpLayout& layout,
                                   const TrainConfig& cfg, Rng& rng, double mu);

// As fedavg, optimizing v with f(.; theta0 + P v).
ClientUpdate ldfedavg_client_update(const ClientDataset& dataset, std::span<const double> v,
                                    const ExpansionBasis& basis, const TrainConfig& cfg,
                                    Rng& rng);

struct BaselineResult {
    GlobalModelState model;
    std::vector<RoundLog> logs;
};

// Cohorts come from labeled clients only. FedAvg and FedProx start at theta0 of
// the shared basis, LD-FedAvg at v = 0.
BaselineResult train_baseline(const Federation& federation, const TrainConfig& cfg, Method method,
                              const BoundaryObserver& observer = {});

ClientModel global_model(const GlobalModelState& state, const ExpansionBasis& basis);

}  // namespace flowdup
