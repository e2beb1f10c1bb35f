#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowdup/baselines.hpp"
#include "flowdup/bound.hpp"
#include "flowdup/datagen.hpp"
#include "flowdup/eval.hpp"
#include "flowdup/runtime.hpp"

namespace flowdup {

inline constexpr int kSchemaVersion = 1;

struct ExperimentConfig {
    FederationSpec federation;
    TrainConfig train;
    std::vector<Method> methods{Method::FLowDUP};
    std::size_t n_seeds = 1;
    std::optional<std::uint64_t> data_seed;  // defaults to the run seed
    EvalOptions eval;
    bool dump_embeddings = false;
    bool compute_bound = false;
    BoundConfig bound;
    bool save_checkpoint = true;
    nlohmann::json source;  // the validated input, used for hashing and echo
};

// Flat key-value JSON. Unknown keys and bad types raise ConfigError naming
// every offending key.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// Names of every accepted key, sorted.
std::vector<std::string> config_keys();

// FNV-1a 64 of the canonical (sorted-key, compact) dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& doc);

// Run-specific copy: seed replaced and federation seed derived from it.
ExperimentConfig for_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// Binary checkpoint: "FLWD1", u32 section count, then per section a u32 name
// length, the name bytes, a u64 element count and that many f64 values. All
// integers and doubles are little-endian.
struct Checkpoint {
    std::vector<std::pair<std::string, std::vector<double>>> sections;

    const std::vector<double>* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);
std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

Checkpoint to_checkpoint(const LearnableState& state);
Checkpoint to_checkpoint(const GlobalModelState& model);

// Trained model of either family.
struct TrainedModel {
    Method method = Method::FLowDUP;
    std::optional<LearnableState> state;
    std::optional<GlobalModelState> global;
    std::vector<RoundLog> logs;
};

TrainedModel train_method(const Federation& federation, const TrainConfig& cfg, Method method);

// Rebuilds a model from a checkpoint using the architecture implied by `cfg`.
TrainedModel model_from_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                                   const Federation& federation, Method method);

EvalReport evaluate_model(const TrainedModel& model, const ExpansionBasis& basis,
                          const Federation& federation, const GroundTruth& truth,
                          const EvalOptions& options);

nlohmann::json report_json(const EvalReport& report, const std::string& hash);
nlohmann::json bound_json(const BoundReport& report, const std::string& hash, std::uint64_t seed);
std::string rounds_csv(const std::vector<RoundLog>& logs);
std::string embeddings_csv(const EmbeddingDump& dump);

struct RunRecord {
    Method method;
    std::uint64_t seed;
    EvalReport report;
    std::optional<BoundReport> bound;
    std::optional<Separation> separation;
};

struct ExperimentResult {
    std::string config_hash;
    std::vector<RunRecord> runs;
    nlohmann::json summary;
};

// For each seed and method: generate or load the federation, train,
// evaluate and write artifacts into `out_dir`.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir);

// Cartesian product of the grid's value lists applied over the base config;
// each cell runs in out_dir/cell_<index>.
std::vector<ExperimentResult> run_sweep(const nlohmann::json& base, const nlohmann::json& grid,
                                        const std::filesystem::path& out_dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace flowdup
