#include "flowdup/experiment.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "flowdup/errors.hpp"
#include "flowdup/rng.hpp"

namespace flowdup {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kFreshStream = 0x46525348ULL;  // "FRSH"
constexpr char kMagic[] = "FLWD1";

std::uint64_t as_uint(const json& v) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    throw ConfigError("expected a nonnegative integer");
}

double as_double(const json& v) {
    if (!v.is_number()) throw ConfigError("expected a number");
    return v.get<double>();
}

bool as_bool(const json& v) {
    if (!v.is_boolean()) throw ConfigError("expected true or false");
    return v.get<bool>();
}

std::string as_string(const json& v) {
    if (!v.is_string()) throw ConfigError("expected a string");
    return v.get<std::string>();
}

std::vector<std::size_t> as_size_list(const json& v) {
    if (!v.is_array()) throw ConfigError("expected a list of nonnegative integers");
    std::vector<std::size_t> out;
    for (const auto& x : v) out.push_back(static_cast<std::size_t>(as_uint(x)));
    return out;
}

std::vector<double> as_double_list(const json& v) {
    if (!v.is_array()) throw ConfigError("expected a list of numbers");
    std::vector<double> out;
    for (const auto& x : v) out.push_back(as_double(x));
    return out;
}

using Setter = std::function<void(const json&, ExperimentConfig&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"schema_version", [](const json& v, ExperimentConfig&) {
             if (as_uint(v) != kSchemaVersion) {
                 throw ConfigError("unsupported version (this build reads " +
                                   std::to_string(kSchemaVersion) + ")");
             }
         }},
        {"method", [](const json& v, ExperimentConfig& c) {
             c.methods.clear();
             if (v.is_string()) {
                 c.methods.push_back(parse_method(v.get<std::string>()));
             } else if (v.is_array() && !v.empty()) {
                 for (const auto& m : v) c.methods.push_back(parse_method(as_string(m)));
             } else {
                 throw ConfigError("expected a method name or a nonempty list of names");
             }
         }},
        {"n_seeds", [](const json& v, ExperimentConfig& c) { c.n_seeds = as_uint(v); }},
        {"seed", [](const json& v, ExperimentConfig& c) { c.train.seed = as_uint(v); }},
        {"data_seed", [](const json& v, ExperimentConfig& c) { c.data_seed = as_uint(v); }},
        // federation
        {"dataset", [](const json& v, ExperimentConfig& c) {
             c.federation.kind = parse_federation_kind(as_string(v));
         }},
        {"n_clients", [](const json& v, ExperimentConfig& c) { c.federation.n = as_uint(v); }},
        {"n_eval_clients", [](const json& v, ExperimentConfig& c) { c.federation.n_eval = as_uint(v); }},
        {"m", [](const json& v, ExperimentConfig& c) { c.federation.m = as_uint(v); }},
        {"num_classes", [](const json& v, ExperimentConfig& c) { c.federation.num_classes = as_uint(v); }},
        {"input_dim", [](const json& v, ExperimentConfig& c) { c.federation.input_dim = as_uint(v); }},
        {"sigma", [](const json& v, ExperimentConfig& c) { c.federation.sigma = as_double(v); }},
        {"rotations", [](const json& v, ExperimentConfig& c) { c.federation.rotations_deg = as_double_list(v); }},
        {"coupling", [](const json& v, ExperimentConfig& c) { c.federation.coupling = as_bool(v); }},
        {"classes_per_client", [](const json& v, ExperimentConfig& c) {
             c.federation.classes_per_client = as_uint(v);
         }},
        {"p", [](const json& v, ExperimentConfig& c) { c.federation.p = as_double(v); }},
        {"csv_path", [](const json& v, ExperimentConfig& c) { c.federation.csv_path = as_string(v); }},
        // training
        {"rounds", [](const json& v, ExperimentConfig& c) { c.train.rounds = as_uint(v); }},
        {"cohort_size", [](const json& v, ExperimentConfig& c) { c.train.cohort_size = as_uint(v); }},
        {"labeled_fraction", [](const json& v, ExperimentConfig& c) { c.train.labeled_fraction = as_double(v); }},
        {"local_epochs", [](const json& v, ExperimentConfig& c) { c.train.local_epochs = as_uint(v); }},
        {"batch_size", [](const json& v, ExperimentConfig& c) { c.train.batch_size = as_uint(v); }},
        {"local_lr", [](const json& v, ExperimentConfig& c) { c.train.local_lr = as_double(v); }},
        {"global_lr", [](const json& v, ExperimentConfig& c) { c.train.global_lr = as_double(v); }},
        {"lambda", [](const json& v, ExperimentConfig& c) { c.train.lambda = as_double(v); }},
        {"k", [](const json& v, ExperimentConfig& c) { c.train.k = as_uint(v); }},
        {"client_optimizer", [](const json& v, ExperimentConfig& c) {
             c.train.client_optimizer = parse_optimizer(as_string(v));
         }},
        {"server_optimizer", [](const json& v, ExperimentConfig& c) {
             c.train.server_optimizer = parse_optimizer(as_string(v));
         }},
        {"weight_decay", [](const json& v, ExperimentConfig& c) { c.train.weight_decay = as_double(v); }},
        {"use_unlabeled_clients", [](const json& v, ExperimentConfig& c) {
             c.train.use_unlabeled_clients = as_bool(v);
         }},
        {"learnable_reg", [](const json& v, ExperimentConfig& c) { c.train.learnable_reg = as_bool(v); }},
        {"fedprox_mu", [](const json& v, ExperimentConfig& c) { c.train.fedprox_mu = as_double(v); }},
        {"f_hidden", [](const json& v, ExperimentConfig& c) { c.train.f_hidden = as_size_list(v); }},
        {"h1_hidden", [](const json& v, ExperimentConfig& c) { c.train.h1_hidden = as_size_list(v); }},
        {"embed_dim", [](const json& v, ExperimentConfig& c) { c.train.embed_dim = as_uint(v); }},
        {"h2_hidden", [](const json& v, ExperimentConfig& c) { c.train.h2_hidden = as_size_list(v); }},
        {"h1_final_relu", [](const json& v, ExperimentConfig& c) { c.train.h1_final_relu = as_bool(v); }},
        {"column_normalized", [](const json& v, ExperimentConfig& c) {
             c.train.column_normalized = as_bool(v);
         }},
        {"num_workers", [](const json& v, ExperimentConfig& c) { c.train.num_workers = as_uint(v); }},
        // evaluation and artifacts
        {"eval_fresh_m", [](const json& v, ExperimentConfig& c) { c.eval.fresh_per_client = as_uint(v); }},
        {"dump_embeddings", [](const json& v, ExperimentConfig& c) { c.dump_embeddings = as_bool(v); }},
        {"save_checkpoint", [](const json& v, ExperimentConfig& c) { c.save_checkpoint = as_bool(v); }},
        {"compute_bound", [](const json& v, ExperimentConfig& c) { c.compute_bound = as_bool(v); }},
        {"bound_alpha_h", [](const json& v, ExperimentConfig& c) { c.bound.alpha_h = as_double(v); }},
        {"bound_alpha_theta", [](const json& v, ExperimentConfig& c) { c.bound.alpha_theta = as_double(v); }},
        {"bound_alpha_r", [](const json& v, ExperimentConfig& c) { c.bound.alpha_r = as_double(v); }},
        {"bound_delta", [](const json& v, ExperimentConfig& c) { c.bound.delta = as_double(v); }},
        {"bound_mc_samples", [](const json& v, ExperimentConfig& c) { c.bound.mc_samples = as_uint(v); }},
        {"bound_strict", [](const json& v, ExperimentConfig& c) { c.bound.strict = as_bool(v); }},
        {"bound_sample_task_posterior", [](const json& v, ExperimentConfig& c) {
             c.bound.sample_task_posterior = as_bool(v);
         }},
    };
    return table;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

struct Reader {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (bytes.size() - pos < n) {
            throw ParseError("checkpoint truncated at byte " + std::to_string(pos));
        }
    }
    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
        return v;
    }
};

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json summary_json(const AccuracySummary& s) {
    return {{"accuracy", s.per_client}, {"mean", s.mean}, {"std", s.std}};
}

std::string run_name(Method method, std::uint64_t seed) {
    return method_name(method) + "_seed" + std::to_string(seed);
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, _] : setters()) keys.push_back(k);
    return keys;
}

ExperimentConfig parse_config(const json& doc) {
    if (!doc.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    ExperimentConfig cfg;
    std::vector<std::string> unknown, invalid;
    if (!doc.contains("schema_version")) {
        invalid.push_back("schema_version: missing");
    }
    for (const auto& [key, value] : doc.items()) {
        const auto it = setters().find(key);
        if (it == setters().end()) {
            unknown.push_back(key);
            continue;
        }
        try {
            it->second(value, cfg);
        } catch (const ConfigError& e) {
            invalid.push_back(key + ": " + e.what());
        }
    }
    if (!unknown.empty() || !invalid.empty()) {
        std::string msg = "invalid config";
        if (!unknown.empty()) {
            msg += "; unknown keys:";
            for (const auto& k : unknown) msg += " " + k;
        }
        for (const auto& e : invalid) msg += "; " + e;
        throw ConfigError(msg);
    }
    if (cfg.n_seeds < 1) {
        throw ConfigError("invalid config; n_seeds: must be >= 1");
    }
    cfg.train.validate();
    cfg.federation.validate();
    if (cfg.compute_bound) {
        cfg.bound.validate();
    }
    cfg.source = doc;
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(doc);
}

std::string config_hash(const json& doc) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : doc.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig for_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    ExperimentConfig c = cfg;
    c.train.seed = seed;
    c.federation.seed = cfg.data_seed.value_or(seed);
    c.bound.seed = seed;
    c.eval.fresh_seed = derive_seed(seed, kFreshStream);
    return c;
}

const std::vector<double>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, values] : sections) {
        if (n == name) return &values;
    }
    return nullptr;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<unsigned char> out(kMagic, kMagic + 5);
    put_u32(out, static_cast<std::uint32_t>(ckpt.sections.size()));
    for (const auto& [name, values] : ckpt.sections) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u64(out, values.size());
        for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 5 || !std::equal(kMagic, kMagic + 5, bytes.begin())) {
        throw ParseError("not a checkpoint (bad magic)");
    }
    Reader r{bytes, 5};
    Checkpoint ckpt;
    const auto count = r.uint(4);
    for (std::uint64_t s = 0; s < count; ++s) {
        const auto len = static_cast<std::size_t>(r.uint(4));
        r.need(len);
        std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + len));
        r.pos += len;
        const auto n = r.uint(8);
        if (n > (bytes.size() - r.pos) / 8) {
            throw ParseError("checkpoint section '" + name + "' truncated");
        }
        std::vector<double> values(static_cast<std::size_t>(n));
        for (double& v : values) v = std::bit_cast<double>(r.uint(8));
        ckpt.sections.emplace_back(std::move(name), std::move(values));
    }
    if (r.pos != bytes.size()) {
        throw ParseError("checkpoint has " + std::to_string(bytes.size() - r.pos) +
                         " trailing bytes");
    }
    return ckpt;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

Checkpoint to_checkpoint(const LearnableState& state) {
    return {{{"psi_h", state.hyper}, {"psi_r", state.reg}}};
}

Checkpoint to_checkpoint(const GlobalModelState& model) {
    return {{{model.method == Method::LdFedAvg ? "v" : "theta", model.params}}};
}

TrainedModel train_method(const Federation& federation, const TrainConfig& cfg, Method method) {
    TrainedModel out;
    out.method = method;
    if (method == Method::FLowDUP) {
        TrainResult r = train(federation, cfg);
        out.state = std::move(r.state);
        out.logs = std::move(r.logs);
    } else {
        BaselineResult r = train_baseline(federation, cfg, method);
        out.global = std::move(r.model);
        out.logs = std::move(r.logs);
    }
    return out;
}

TrainedModel model_from_checkpoint(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                                   const Federation& federation, Method method) {
    TrainedModel out;
    out.method = method;
    auto section = [&](const std::string& name, std::size_t expected) {
        const auto* values = ckpt.find(name);
        if (!values) {
            throw ParseError("checkpoint has no '" + name + "' section for method " +
                             method_name(method));
        }
        if (values->size() != expected) {
            throw ParseError("checkpoint section '" + name + "' has " +
                             std::to_string(values->size()) + " values; the configuration needs " +
                             std::to_string(expected));
        }
        return *values;
    };
    if (method == Method::FLowDUP) {
        LearnableState s = LearnableState::initial(make_hypernet(cfg.train, federation.input_dim),
                                                   cfg.train.lambda);
        s.hyper = section("psi_h", s.hyper.size());
        s.reg = section("psi_r", s.reg.size());
        out.state = std::move(s);
    } else {
        const ExpansionBasis basis =
            make_basis(cfg.train, federation.input_dim, federation.num_classes);
        if (method == Method::LdFedAvg) {
            out.global = GlobalModelState{method, section("v", basis.k)};
        } else {
            out.global = GlobalModelState{method, section("theta", basis.d)};
        }
    }
    return out;
}

EvalReport evaluate_model(const TrainedModel& model, const ExpansionBasis& basis,
                          const Federation& federation, const GroundTruth& truth,
                          const EvalOptions& options) {
    if (model.state) {
        return evaluate(*model.state, basis, federation, truth, options);
    }
    return evaluate(*model.global, basis, federation, truth, options);
}

json report_json(const EvalReport& r, const std::string& hash) {
    json j = {{"config_hash", hash},
              {"method", r.method},
              {"p", r.p},
              {"k", r.k},
              {"seed", r.seed},
              {"n_clients", r.client_ids.size()},
              {"client_ids", r.client_ids},
              {"transductive", summary_json(r.transductive)},
              {"runtime_ms", r.runtime_ms}};
    if (r.inductive) {
        j["inductive"] = summary_json(*r.inductive);
    }
    return j;
}

json bound_json(const BoundReport& r, const std::string& hash, std::uint64_t seed) {
    return {{"config_hash", hash},
            {"seed", seed},
            {"emp_risk", r.emp_risk},
            {"term_transductive", r.term_transductive},
            {"term_mtl", r.term_mtl},
            {"rhs", r.rhs},
            {"c1", r.c1},
            {"c2", r.c2},
            {"mc_discrepancy", r.mc_discrepancy},
            {"kl_meta", r.kl_meta},
            {"mean_complexity", r.mean_complexity},
            {"n", r.n},
            {"n_labeled", r.n_labeled},
            {"m", r.m},
            {"config",
             {{"alpha_h", r.config.alpha_h},
              {"alpha_theta", r.config.alpha_theta},
              {"alpha_r", r.config.alpha_r},
              {"delta", r.config.delta},
              {"mc_samples", r.config.mc_samples},
              {"strict", r.config.strict},
              {"sample_task_posterior", r.config.sample_task_posterior}}}};
}

std::string rounds_csv(const std::vector<RoundLog>& logs) {
    std::ostringstream out;
    out << "round,mean_objective,mean_reg,n_labeled_in_cohort,cohort_ids,param_norm,wall_ms\n";
    for (const auto& l : logs) {
        out << l.round << ',' << fmt_double(l.mean_objective) << ',' << fmt_double(l.mean_reg)
            << ',' << l.n_labeled_in_cohort << ',';
        for (std::size_t i = 0; i < l.cohort_ids.size(); ++i) {
            out << (i ? " " : "") << l.cohort_ids[i];
        }
        out << ',' << fmt_double(l.param_norm) << ',' << fmt_double(l.wall_ms) << '\n';
    }
    return out.str();
}

std::string embeddings_csv(const EmbeddingDump& dump) {
    std::ostringstream out;
    out << "client_id,tag,pc1,pc2";
    const std::size_t e = dump.rows.empty() ? 0 : dump.rows.front().embedding.size();
    for (std::size_t j = 0; j < e; ++j) out << ",r" << j;
    out << '\n';
    for (const auto& row : dump.rows) {
        out << row.client_id << ',' << row.tag << ',' << fmt_double(row.projection[0]) << ','
            << fmt_double(row.projection[1]);
        for (double x : row.embedding) out << ',' << fmt_double(x);
        out << '\n';
    }
    return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    }
    ExperimentResult result;
    result.config_hash = config_hash(cfg.source);
    const std::string& hash = result.config_hash;

    for (std::size_t s = 0; s < cfg.n_seeds; ++s) {
        const ExperimentConfig c = for_seed(cfg, cfg.train.seed + s);
        const std::uint64_t seed = c.train.seed;
        const GeneratedFederation data = generate(c.federation);
        const Federation& fed = data.federation;
        const ExpansionBasis basis = make_basis(c.train, fed.input_dim, fed.num_classes);

        for (Method method : c.methods) {
            const auto started = std::chrono::steady_clock::now();
            const TrainedModel model = train_method(fed, c.train, method);
            RunRecord rec{method, seed, evaluate_model(model, basis, fed, data.truth, c.eval),
                          std::nullopt, std::nullopt};
            rec.report.p = static_cast<double>(fed.labeled_count()) /
                           static_cast<double>(fed.clients.size());
            rec.report.seed = seed;
            const std::string name = run_name(method, seed);

            if (c.save_checkpoint) {
                write_checkpoint(out_dir / ("checkpoint_" + name + ".bin"),
                                 model.state ? to_checkpoint(*model.state)
                                             : to_checkpoint(*model.global));
            }
            write_text(out_dir / ("rounds_" + name + ".csv"), rounds_csv(model.logs));
            if (model.state && c.dump_embeddings) {
                const EmbeddingDump dump = dump_embeddings(*model.state, fed.eval_clients, &data.truth);
                write_text(out_dir / ("embeddings_" + name + ".csv"), embeddings_csv(dump));
                try {
                    rec.separation = cluster_separation(dump);
                } catch (const ContractError&) {
                    // too few clients per tag to score separation
                }
            }
            if (model.state && c.compute_bound) {
                rec.bound = bound_rhs(*model.state, fed, basis, c.bound);
                json bj = bound_json(*rec.bound, hash, seed);
                bool have_truth = data.truth.kind() != FederationKind::Csv;
                if (have_truth) {
                    const PopulationRisk pr = population_risk(*model.state, fed, basis, data.truth,
                                                              c.bound, 1000, c.eval.fresh_seed);
                    bj["holdout"] = {{"er", pr.er}, {"ter", pr.ter}, {"her", pr.her}};
                }
                write_text(out_dir / ("bound_" + name + ".json"), bj.dump(2) + "\n");
            }
            rec.report.runtime_ms = std::chrono::duration<double, std::milli>(
                                        std::chrono::steady_clock::now() - started)
                                        .count();
            json rj = report_json(rec.report, hash);
            if (rec.separation) {
                rj["separation"] = {{"intra", rec.separation->intra},
                                    {"inter", rec.separation->inter}};
            }
            write_text(out_dir / ("report_" + name + ".json"), rj.dump(2) + "\n");
            result.runs.push_back(std::move(rec));
        }
    }

    json methods = json::object();
    for (Method method : cfg.methods) {
        std::vector<double> means;
        std::vector<std::uint64_t> seeds;
        for (const auto& run : result.runs) {
            if (run.method == method) {
                means.push_back(run.report.transductive.mean);
                seeds.push_back(run.seed);
            }
        }
        const AccuracySummary across = summarize(means);
        methods[method_name(method)] = {
            {"seeds", seeds}, {"mean_accuracy", means}, {"mean", across.mean}, {"std", across.std}};
    }
    result.summary = {{"config_hash", hash}, {"config", cfg.source}, {"methods", methods}};
    write_text(out_dir / "summary.json", result.summary.dump(2) + "\n");
    return result;
}

std::vector<ExperimentResult> run_sweep(const json& base, const json& grid,
                                        const fs::path& out_dir) {
    if (!grid.is_object() || grid.empty()) {
        throw ConfigError("sweep grid must be a nonempty object of key -> list of values");
    }
    std::vector<std::string> keys;
    std::vector<std::vector<json>> values;
    for (const auto& [key, list] : grid.items()) {
        if (!list.is_array() || list.empty()) {
            throw ConfigError("sweep grid key '" + key + "' must map to a nonempty list");
        }
        keys.push_back(key);
        values.emplace_back(list.begin(), list.end());
    }
    std::size_t total = 1;
    for (const auto& v : values) total *= v.size();
    std::vector<json> cells;
    for (std::size_t cell = 0; cell < total; ++cell) {
        // Last key varies fastest.
        json overrides = json::object();
        std::size_t rest = cell;
        for (std::size_t i = keys.size(); i-- > 0;) {
            overrides[keys[i]] = values[i][rest % values[i].size()];
            rest /= values[i].size();
        }
        cells.push_back(std::move(overrides));
    }

    // Validate every cell before running any.
    std::vector<ExperimentConfig> configs;
    for (const auto& overrides : cells) {
        json doc = base;
        for (const auto& [k, v] : overrides.items()) doc[k] = v;
        configs.push_back(parse_config(doc));
    }
    std::vector<ExperimentResult> results;
    json index = json::array();
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const std::string dir = "cell_" + std::to_string(i);
        results.push_back(run_experiment(configs[i], out_dir / dir));
        index.push_back({{"cell", dir},
                         {"overrides", cells[i]},
                         {"config_hash", results.back().config_hash},
                         {"methods", results.back().summary["methods"]}});
    }
    write_text(out_dir / "sweep_index.json", index.dump(2) + "\n");
    return results;
}

}  // namespace flowdup
