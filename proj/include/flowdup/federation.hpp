#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowdup/tensor.hpp"

namespace flowdup {

// Local data of one simulated device. A client is labeled iff it holds Y;
// unlabeled clients have no label storage at all.
class ClientDataset {
public:
    ClientDataset(int id, Tensor features);
    ClientDataset(int id, Tensor features, std::vector<int> labels);

    int id() const { return id_; }
    const Tensor& features() const { return features_; }
    std::size_t size() const { return features_.rows(); }
    std::size_t input_dim() const { return features_.cols(); }
    bool labeled() const { return labels_.has_value(); }
    std::optional<std::span<const int>> labels() const;

    // Optional per-row tags ("train", "val", "test"); empty when absent.
    const std::vector<std::string>& split_tags() const { return split_tags_; }
    void set_split_tags(std::vector<std::string> tags);

    ClientDataset without_labels() const;

private:
    int id_;
    Tensor features_;
    std::optional<std::vector<int>> labels_;
    std::vector<std::string> split_tags_;
};

// What trainers see: training clients and the (always unlabeled) evaluation
// clients. Ground truth for evaluation lives outside, in GroundTruth.
struct Federation {
    std::vector<ClientDataset> clients;
    std::vector<ClientDataset> eval_clients;
    std::size_t num_classes = 0;
    std::size_t input_dim = 0;

    std::size_t labeled_count() const;
};

}  // namespace flowdup
