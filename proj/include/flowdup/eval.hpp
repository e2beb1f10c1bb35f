#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "flowdup/baselines.hpp"
#include "flowdup/datagen.hpp"
#include "flowdup/federation.hpp"
#include "flowdup/objective.hpp"
#include "flowdup/subspace.hpp"

namespace flowdup {

struct AccuracySummary {
    std::vector<double> per_client;
    double mean = 0.0;
    double std = 0.0;  // population std over clients
};

AccuracySummary summarize(std::vector<double> per_client);

struct EvalReport {
    std::string method;
    double p = 0.0;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<int> client_ids;
    AccuracySummary transductive;            // scored on the rows that generated the model
    std::optional<AccuracySummary> inductive;  // disjoint fresh rows per client
    double runtime_ms = 0.0;
};

struct EvalOptions {
    std::size_t fresh_per_client = 0;  // 0 disables the inductive score
    std::uint64_t fresh_seed = 0;
};

// Builds a classifier from a client's unlabeled features. The evaluator
// calls it once per client and scores it against ground truth only.
using ModelFactory = std::function<ClientModel(const ClientDataset&)>;

EvalReport evaluate_models(const std::vector<ClientDataset>& eval_clients,
                           const GroundTruth& truth, const ModelFactory& factory,
                           const EvalOptions& options = {});

// Personalized models from all rows of each evaluation client.
EvalReport evaluate(const LearnableState& state, const ExpansionBasis& basis,
                    const Federation& federation, const GroundTruth& truth,
                    const EvalOptions& options = {});

// One shared global model for every client.
EvalReport evaluate(const GlobalModelState& model, const ExpansionBasis& basis,
                    const Federation& federation, const GroundTruth& truth,
                    const EvalOptions& options = {});

struct EmbeddingRow {
    int client_id = 0;
    std::vector<double> embedding;  // r(X)
    std::array<double, 2> projection{};
    std::string tag;
};

struct EmbeddingDump {
    std::vector<EmbeddingRow> rows;
};

// r(X_i) on all rows of each client, projected with pca2. Tags come from
// `truth` when given.
EmbeddingDump dump_embeddings(const LearnableState& state, const std::vector<ClientDataset>& clients,
                              const GroundTruth* truth = nullptr);

struct PcaOptions {
    double tolerance = 1e-9;
    std::size_t max_iterations = 10000;
};

// Centers the points and projects them onto the top two principal directions
// (power iteration with deflation). Each direction's first nonzero coordinate
// is positive.
std::vector<std::array<double, 2>> pca2(const std::vector<std::vector<double>>& points,
                                        const PcaOptions& options = {});

// The two directions pca2 projects onto, for inspection and tests.
std::array<std::vector<double>, 2> pca2_directions(const std::vector<std::vector<double>>& points,
                                                   const PcaOptions& options = {});

struct Separation {
    double intra = 0.0;
    double inter = 0.0;
};

// Mean pairwise L2 distance over same-tag pairs (intra) and cross-tag pairs
// (inter), in the full embedding space.
Separation cluster_separation(const EmbeddingDump& dump);

}  // namespace flowdup
