#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "flowdup/bound.hpp"
#include "flowdup/datagen.hpp"
#include "flowdup/errors.hpp"
#include "flowdup/eval.hpp"
#include "flowdup/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace flowdup;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + " is not valid JSON: " + e.what());
    }
}

void emit(const json& doc, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << doc.dump(2) << "\n";
    } else {
        write_text(out_path, doc.dump(2) + "\n");
    }
}

struct Loaded {
    ExperimentConfig cfg;
    GeneratedFederation data;
    TrainedModel model;
    ExpansionBasis basis;
};

Loaded load_trained(const std::string& config_path, const std::string& checkpoint_path,
                    const std::string& method_override) {
    ExperimentConfig base = load_config(config_path);
    ExperimentConfig cfg = for_seed(base, base.train.seed);
    const Method method =
        method_override.empty() ? cfg.methods.front() : parse_method(method_override);
    GeneratedFederation data = generate(cfg.federation);
    ExpansionBasis basis =
        make_basis(cfg.train, data.federation.input_dim, data.federation.num_classes);
    TrainedModel model =
        model_from_checkpoint(read_checkpoint(checkpoint_path), cfg, data.federation, method);
    return {std::move(cfg), std::move(data), std::move(model), std::move(basis)};
}

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir) {
    const json doc = read_json(spec_path);
    const ExperimentConfig cfg = for_seed(parse_config(doc), parse_config(doc).train.seed);
    const GeneratedFederation data = generate(cfg.federation);
    fs::create_directories(out_dir);
    const fs::path csv = fs::path(out_dir) / "federation.csv";
    export_csv(csv.string(), data.federation, data.truth);
    const json sidecar = {{"config_hash", config_hash(doc)},
                          {"seed", cfg.federation.seed},
                          {"spec", doc},
                          {"n_clients", data.federation.clients.size()},
                          {"n_labeled", data.federation.labeled_count()},
                          {"n_eval_clients", data.federation.eval_clients.size()},
                          {"num_classes", data.federation.num_classes},
                          {"input_dim", data.federation.input_dim}};
    write_text(fs::path(out_dir) / "federation.json", sidecar.dump(2) + "\n");
    std::cout << "wrote " << csv.string() << "\n";
    return kOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    const ExperimentConfig cfg = load_config(config_path);
    const ExperimentResult result = run_experiment(cfg, out_dir);
    for (const auto& [name, m] : result.summary["methods"].items()) {
        std::printf("%-9s accuracy %.4f +- %.4f over %zu seed(s)\n", name.c_str(),
                    m["mean"].get<double>(), m["std"].get<double>(), m["seeds"].size());
    }
    return kOk;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& method,
             const std::string& out) {
    const Loaded l = load_trained(config_path, ckpt, method);
    EvalReport r = evaluate_model(l.model, l.basis, l.data.federation, l.data.truth, l.cfg.eval);
    r.seed = l.cfg.train.seed;
    r.p = static_cast<double>(l.data.federation.labeled_count()) /
          static_cast<double>(l.data.federation.clients.size());
    emit(report_json(r, config_hash(l.cfg.source)), out);
    return kOk;
}

int cmd_bound(const std::string& config_path, const std::string& ckpt, const std::string& out) {
    const Loaded l = load_trained(config_path, ckpt, "flowdup");
    const BoundReport r = bound_rhs(*l.model.state, l.data.federation, l.basis, l.cfg.bound);
    json doc = bound_json(r, config_hash(l.cfg.source), l.cfg.train.seed);
    if (l.data.truth.kind() != FederationKind::Csv) {
        const PopulationRisk pr = population_risk(*l.model.state, l.data.federation, l.basis,
                                                  l.data.truth, l.cfg.bound, 1000,
                                                  l.cfg.eval.fresh_seed);
        doc["holdout"] = {{"er", pr.er}, {"ter", pr.ter}, {"her", pr.her}};
    }
    emit(doc, out);
    return kOk;
}

int cmd_embed(const std::string& config_path, const std::string& ckpt, const std::string& out) {
    const Loaded l = load_trained(config_path, ckpt, "flowdup");
    const EmbeddingDump dump =
        dump_embeddings(*l.model.state, l.data.federation.eval_clients, &l.data.truth);
    write_text(out, embeddings_csv(dump));
    try {
        const Separation s = cluster_separation(dump);
        std::printf("intra %.6f inter %.6f ratio %.3f\n", s.intra, s.inter, s.inter / s.intra);
    } catch (const ContractError& e) {
        std::printf("separation not available: %s\n", e.what());
    }
    return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path,
              const std::string& out_dir) {
    const auto results = run_sweep(read_json(config_path), read_json(grid_path), out_dir);
    std::printf("%zu cells written to %s\n", results.size(), out_dir.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning with unlabeled data via hypernetwork-generated models"};
    app.require_subcommand(1);

    std::string spec, config, out, checkpoint, grid, method;

    auto* gen = app.add_subcommand("gen-data", "generate a federation and export it as CSV");
    gen->add_option("spec", spec, "config JSON with the federation keys")->required();
    gen->add_option("-o,--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train every configured method and seed");
    train->add_option("-c,--config", config)->required();
    train->add_option("-o,--out", out, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the evaluation clients");
    eval->add_option("-c,--config", config)->required();
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--method", method, "defaults to the first configured method");
    eval->add_option("-o,--out", out, "report path (stdout when omitted)");

    auto* bound = app.add_subcommand("bound", "evaluate the generalization bound of a checkpoint");
    bound->add_option("-c,--config", config)->required();
    bound->add_option("--checkpoint", checkpoint)->required();
    bound->add_option("-o,--out", out, "report path (stdout when omitted)");

    auto* embed = app.add_subcommand("embed", "dump evaluation-client embeddings as CSV");
    embed->add_option("-c,--config", config)->required();
    embed->add_option("--checkpoint", checkpoint)->required();
    embed->add_option("-o,--out", out, "CSV path")->required();

    auto* sweep = app.add_subcommand("sweep", "run a grid of configurations");
    sweep->add_option("-c,--config", config)->required();
    sweep->add_option("--grid", grid, "JSON object of key -> list of values")->required();
    sweep->add_option("-o,--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*gen) return cmd_gen_data(spec, out);
        if (*train) return cmd_train(config, out);
        if (*eval) return cmd_eval(config, checkpoint, method, out);
        if (*bound) return cmd_bound(config, checkpoint, out);
        if (*embed) return cmd_embed(config, checkpoint, out);
        if (*sweep) return cmd_sweep(config, grid, out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const ParseError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kFailure;
}
