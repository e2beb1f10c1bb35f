#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowdup/federation.hpp"
#include "flowdup/tensor.hpp"

namespace flowdup {

enum class FederationKind { RotatedClusters, ClassPartition, Csv };

FederationKind parse_federation_kind(const std::string& name);
std::string to_string(FederationKind kind);

struct FederationSpec {
    FederationKind kind = FederationKind::RotatedClusters;
    std::size_t n = 200;       // training clients
    std::size_t n_eval = 50;   // held-out evaluation clients
    std::size_t m = 100;       // examples per client
    std::size_t num_classes = 8;
    std::size_t input_dim = 2;
    double sigma = 0.15;
    std::vector<double> rotations_deg{0.0, 90.0, 180.0, 270.0};
    bool coupling = true;
    std::size_t classes_per_client = 2;
    double p = 0.2;
    std::uint64_t seed = 0;
    std::string csv_path;

    void validate() const;
};

struct Sample {
    Tensor x;
    std::vector<int> y;
};

// The data-generating process shared by every client: per-class Gaussian
// means, mixture weights and spread. Clients differ by a rotation or a
// class subset.
struct Mixture {
    std::vector<std::vector<double>> means;
    std::vector<double> weights;  // normalized
    double sigma = 0.0;
};

struct ClientDistribution {
    double rotation_deg = 0.0;
    std::vector<int> class_set;  // empty: all classes with mixture weights
};

// What only the evaluator and the analysis tools may see: labels of every
// client (including unlabeled training and evaluation clients), each client's
// generating distribution, and a tag for grouping.
class GroundTruth {
public:
    GroundTruth() = default;
    GroundTruth(FederationKind kind, Mixture mixture);

    void set_labels(int client_id, std::vector<int> labels);
    void set_distribution(int client_id, ClientDistribution dist);

    bool has_labels(int client_id) const;
    // EvaluationError when the client has no ground-truth row.
    const std::vector<int>& labels(int client_id) const;
    bool has_distribution(int client_id) const;
    const ClientDistribution& distribution(int client_id) const;
    // "rot90", "cls0-3", or "unknown".
    std::string tag(int client_id) const;

    const Mixture& mixture() const { return mixture_; }
    FederationKind kind() const { return kind_; }

    // Fresh i.i.d. draws from the client's distribution.
    Sample fresh_sample(int client_id, std::size_t count, std::uint64_t seed) const;

    // Bayes classifier for the client's distribution (known rotation/class set).
    std::vector<int> bayes_predict(int client_id, const Tensor& X) const;

    // Expected accuracy of bayes_predict, by quadrature (2-D rotated clusters).
    double bayes_accuracy(int client_id) const;

private:
    FederationKind kind_ = FederationKind::Csv;
    Mixture mixture_;
    std::map<int, std::vector<int>> labels_;
    std::map<int, ClientDistribution> dists_;
};

struct GeneratedFederation {
    Federation federation;
    GroundTruth truth;
};

// Row-major 2x2 rotation; multiples of 90 degrees are exact.
std::array<double, 4> rotation_matrix(double degrees);

Mixture rotated_clusters_mixture(const FederationSpec& spec);
Mixture class_partition_mixture(const FederationSpec& spec);

// m draws from `dist` under `mixture`; rotation is applied to the features.
Sample sample_client(const Mixture& mixture, const ClientDistribution& dist, std::size_t m,
                     std::uint64_t seed);

// All training clients labeled; evaluation clients carry no labels (theirs go
// to the ground truth). Use assign_labels or generate for a partially labeled
// federation.
GeneratedFederation gen_rotated_clusters(const FederationSpec& spec);
GeneratedFederation gen_class_partition(const FederationSpec& spec);

// Keeps Y on exactly round(p * n) randomly chosen training clients; removed
// labels move to `truth` when given.
Federation assign_labels(const Federation& federation, double p, std::uint64_t seed,
                         GroundTruth* truth = nullptr);

// Generator (or CSV loader) followed by assign_labels with spec.p.
GeneratedFederation generate(const FederationSpec& spec);

// Header: client_id,split,label,x0,x1,...; split in {train, val, test}. A
// client whose rows are all "test" becomes an evaluation client. Empty labels
// mark an unlabeled client; a client mixing empty and present labels is
// rejected.
GeneratedFederation load_csv(const std::string& path);

// Training clients with their visible labels, evaluation clients as "test"
// rows with ground-truth labels. Values are written with 17 significant digits.
void export_csv(const std::string& path, const Federation& federation, const GroundTruth& truth);

}  // namespace flowdup
