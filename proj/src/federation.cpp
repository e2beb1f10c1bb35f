#include "flowdup/federation.hpp"

#include <algorithm>

#include "flowdup/errors.hpp"

namespace flowdup {

ClientDataset::ClientDataset(int id, Tensor features) : id_(id), features_(std::move(features)) {
    if (features_.rank() != 2) {
        throw DimensionError("client features must be a matrix");
    }
    if (features_.rows() < 2) {
        throw ContractError("client " + std::to_string(id) +
                            " needs at least 2 examples to form a batch split");
    }
}

ClientDataset::ClientDataset(int id, Tensor features, std::vector<int> labels)
    : ClientDataset(id, std::move(features)) {
    if (labels.size() != size()) {
        throw DimensionError("client " + std::to_string(id) + ": " +
                             std::to_string(labels.size()) + " labels for " +
                             std::to_string(size()) + " rows");
    }
    labels_ = std::move(labels);
}

std::optional<std::span<const int>> ClientDataset::labels() const {
    if (!labels_) {
        return std::nullopt;
    }
    return std::span<const int>(*labels_);
}

void ClientDataset::set_split_tags(std::vector<std::string> tags) {
    if (!tags.empty() && tags.size() != size()) {
        throw DimensionError("split tags must cover every row");
    }
    split_tags_ = std::move(tags);
}

ClientDataset ClientDataset::without_labels() const {
    ClientDataset out(id_, features_);
    out.split_tags_ = split_tags_;
    return out;
}

std::size_t Federation::labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(clients.begin(), clients.end(), [](const auto& c) { return c.labeled(); }));
}

}  // namespace flowdup
