#include "flowdup/datagen.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>

#include "flowdup/errors.hpp"
#include "flowdup/rng.hpp"

namespace flowdup {

namespace {
constexpr std::uint64_t kMeanStream = 0x4d45414eULL;    // "MEAN"
constexpr std::uint64_t kClientStream = 0x434c4e54ULL;  // "CLNT"
constexpr std::uint64_t kShapeStream = 0x53484150ULL;   // "SHAP"
constexpr std::uint64_t kLabelStream = 0x4c41424cULL;   // "LABL"

std::size_t sample_weighted(Rng& rng, const std::vector<double>& weights) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t c = 0; c < weights.size(); ++c) {
        acc += weights[c];
        if (u < acc) {
            return c;
        }
    }
    return weights.size() - 1;
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && s[i] == ' ') ++i;
    return s.substr(i);
}

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// Per-class log-score of a point already mapped into the client's base frame.
std::vector<double> class_scores(const Mixture& mix, const ClientDistribution& dist,
                                 std::span<const double> x) {
    const std::size_t C = mix.means.size();
    std::vector<double> score(C, -std::numeric_limits<double>::infinity());
    const double inv = 1.0 / (2.0 * mix.sigma * mix.sigma);
    for (std::size_t c = 0; c < C; ++c) {
        double w = mix.weights[c];
        if (!dist.class_set.empty()) {
            const bool in_set = std::find(dist.class_set.begin(), dist.class_set.end(),
                                          static_cast<int>(c)) != dist.class_set.end();
            w = in_set ? 1.0 / static_cast<double>(dist.class_set.size()) : 0.0;
        }
        if (w <= 0.0) {
            continue;
        }
        double d2 = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double diff = x[j] - mix.means[c][j];
            d2 += diff * diff;
        }
        score[c] = std::log(w) - d2 * inv;
    }
    return score;
}

int argmax_first(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

FederationKind parse_federation_kind(const std::string& name) {
    if (name == "rotated_clusters") return FederationKind::RotatedClusters;
    if (name == "class_partition") return FederationKind::ClassPartition;
    if (name == "csv") return FederationKind::Csv;
    throw ConfigError("unknown federation kind '" + name +
                      "' (expected rotated_clusters, class_partition or csv)");
}

std::string to_string(FederationKind kind) {
    switch (kind) {
        case FederationKind::RotatedClusters: return "rotated_clusters";
        case FederationKind::ClassPartition: return "class_partition";
        case FederationKind::Csv: return "csv";
    }
    return "unknown";
}

void FederationSpec::validate() const {
    if (!(p > 0.0 && p <= 1.0)) {
        throw ConfigError("p must lie in (0, 1]");
    }
    if (kind == FederationKind::Csv) {
        if (csv_path.empty()) {
            throw ConfigError("csv federation needs csv_path");
        }
        return;
    }
    if (n < 1) throw ConfigError("n must be >= 1");
    if (std::llround(p * static_cast<double>(n)) < 1) {
        throw ConfigError("round(p * n) must be at least 1");
    }
    if (m < 2) throw ConfigError("m must be >= 2");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (kind == FederationKind::RotatedClusters) {
        if (input_dim != 2) {
            throw ConfigError("rotated clusters are planar: input_dim must be 2, got " +
                              std::to_string(input_dim));
        }
        if (rotations_deg.empty()) throw ConfigError("rotation set must be nonempty");
    } else {
        if (input_dim < 1) throw ConfigError("input_dim must be >= 1");
        if (classes_per_client < 1 || classes_per_client > num_classes) {
            throw ConfigError("classes_per_client must lie in [1, num_classes]");
        }
    }
}

std::array<double, 4> rotation_matrix(double degrees) {
    double r = std::fmod(degrees, 360.0);
    if (r < 0.0) r += 360.0;
    if (r == 0.0) return {1.0, 0.0, 0.0, 1.0};
    if (r == 90.0) return {0.0, -1.0, 1.0, 0.0};
    if (r == 180.0) return {-1.0, 0.0, 0.0, -1.0};
    if (r == 270.0) return {0.0, 1.0, -1.0, 0.0};
    const double t = r * std::numbers::pi / 180.0;
    return {std::cos(t), -std::sin(t), std::sin(t), std::cos(t)};
}

GroundTruth::GroundTruth(FederationKind kind, Mixture mixture)
    : kind_(kind), mixture_(std::move(mixture)) {}

void GroundTruth::set_labels(int client_id, std::vector<int> labels) {
    labels_[client_id] = std::move(labels);
}

void GroundTruth::set_distribution(int client_id, ClientDistribution dist) {
    dists_[client_id] = std::move(dist);
}

bool GroundTruth::has_labels(int client_id) const { return labels_.count(client_id) > 0; }

const std::vector<int>& GroundTruth::labels(int client_id) const {
    const auto it = labels_.find(client_id);
    if (it == labels_.end()) {
        throw EvaluationError("no ground-truth labels for client " + std::to_string(client_id));
    }
    return it->second;
}

bool GroundTruth::has_distribution(int client_id) const { return dists_.count(client_id) > 0; }

const ClientDistribution& GroundTruth::distribution(int client_id) const {
    const auto it = dists_.find(client_id);
    if (it == dists_.end()) {
        throw EvaluationError("no generating distribution for client " +
                              std::to_string(client_id));
    }
    return it->second;
}

std::string GroundTruth::tag(int client_id) const {
    if (!has_distribution(client_id)) {
        return "unknown";
    }
    const ClientDistribution& d = distribution(client_id);
    if (kind_ == FederationKind::ClassPartition) {
        std::string t = "cls";
        for (std::size_t i = 0; i < d.class_set.size(); ++i) {
            t += (i ? "-" : "") + std::to_string(d.class_set[i]);
        }
        return t;
    }
    return "rot" + std::to_string(static_cast<long long>(std::llround(d.rotation_deg)));
}

Sample GroundTruth::fresh_sample(int client_id, std::size_t count, std::uint64_t seed) const {
    return sample_client(mixture_, distribution(client_id), count, seed);
}

std::vector<int> GroundTruth::bayes_predict(int client_id, const Tensor& X) const {
    const ClientDistribution& dist = distribution(client_id);
    const std::size_t dim = X.cols();
    std::vector<int> out;
    out.reserve(X.rows());
    std::vector<double> base(dim);
    const bool rotated = dim == 2 && dist.rotation_deg != 0.0;
    const auto R = rotation_matrix(dist.rotation_deg);
    for (std::size_t i = 0; i < X.rows(); ++i) {
        if (rotated) {
            // Inverse rotation is the transpose.
            const double a = X.at(i, 0), b = X.at(i, 1);
            base[0] = R[0] * a + R[2] * b;
            base[1] = R[1] * a + R[3] * b;
        } else {
            for (std::size_t j = 0; j < dim; ++j) base[j] = X.at(i, j);
        }
        out.push_back(argmax_first(class_scores(mixture_, dist, base)));
    }
    return out;
}

double GroundTruth::bayes_accuracy(int client_id) const {
    const ClientDistribution& dist = distribution(client_id);
    if (mixture_.means.empty() || mixture_.means.front().size() != 2) {
        throw DomainError("bayes_accuracy: quadrature is implemented for 2-D mixtures");
    }
    // Rotation does not change the accuracy; integrate in the base frame:
    // sum over the grid of max_c w_c N(x; mu_c, sigma^2 I).
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& mu : mixture_.means) {
        for (double v : mu) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double s = mixture_.sigma;
    lo -= 8.0 * s;
    hi += 8.0 * s;
    const std::size_t grid = 800;
    const double h = (hi - lo) / static_cast<double>(grid);
    const double norm = 1.0 / (2.0 * std::numbers::pi * s * s);
    double total = 0.0;
    std::vector<double> x(2);
    for (std::size_t i = 0; i < grid; ++i) {
        x[0] = lo + (static_cast<double>(i) + 0.5) * h;
        for (std::size_t j = 0; j < grid; ++j) {
            x[1] = lo + (static_cast<double>(j) + 0.5) * h;
            const auto score = class_scores(mixture_, dist, x);
            total += norm * std::exp(*std::max_element(score.begin(), score.end()));
        }
    }
    return total * h * h;
}

Mixture rotated_clusters_mixture(const FederationSpec& spec) {
    Mixture mix;
    mix.sigma = spec.sigma;
    const std::size_t C = spec.num_classes;
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(C);
        mix.means.push_back({std::cos(angle), std::sin(angle)});
        // Unequal weights make the rotated marginal reveal the rotation.
        const double w = spec.coupling ? static_cast<double>(c + 1) : 1.0;
        mix.weights.push_back(w);
        total += w;
    }
    for (double& w : mix.weights) w /= total;
    return mix;
}

Mixture class_partition_mixture(const FederationSpec& spec) {
    Mixture mix;
    mix.sigma = spec.sigma;
    Rng rng(derive_seed(spec.seed, kMeanStream));
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        std::vector<double> mu(spec.input_dim);
        for (double& v : mu) v = rng.normal();
        mix.means.push_back(std::move(mu));
    }
    mix.weights.assign(spec.num_classes, 1.0 / static_cast<double>(spec.num_classes));
    return mix;
}

Sample sample_client(const Mixture& mixture, const ClientDistribution& dist, std::size_t m,
                     std::uint64_t seed) {
    const std::size_t dim = mixture.means.front().size();
    Rng rng(seed);
    std::vector<double> x;
    x.reserve(m * dim);
    std::vector<int> y;
    y.reserve(m);
    const auto R = rotation_matrix(dist.rotation_deg);
    std::vector<double> point(dim);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t c;
        if (dist.class_set.empty()) {
            c = sample_weighted(rng, mixture.weights);
        } else {
            c = static_cast<std::size_t>(dist.class_set[rng.uniform_index(dist.class_set.size())]);
        }
        for (std::size_t j = 0; j < dim; ++j) {
            point[j] = mixture.means[c][j] + mixture.sigma * rng.normal();
        }
        if (dim == 2) {
            const double a = point[0], b = point[1];
            point[0] = R[0] * a + R[1] * b;
            point[1] = R[2] * a + R[3] * b;
        }
        x.insert(x.end(), point.begin(), point.end());
        y.push_back(static_cast<int>(c));
    }
    return {Tensor::matrix(m, dim, std::move(x)), std::move(y)};
}

namespace {

GeneratedFederation build(const FederationSpec& spec, Mixture mixture,
                          const std::function<ClientDistribution(Rng&)>& draw_shape) {
    GeneratedFederation out{{}, GroundTruth(spec.kind, mixture)};
    Federation& fed = out.federation;
    fed.num_classes = spec.num_classes;
    fed.input_dim = spec.input_dim;
    const std::size_t total = spec.n + spec.n_eval;
    for (std::size_t i = 0; i < total; ++i) {
        const int id = static_cast<int>(i);
        Rng shape_rng(derive_seed(spec.seed, kShapeStream, i));
        ClientDistribution dist = draw_shape(shape_rng);
        Sample s = sample_client(mixture, dist, spec.m, derive_seed(spec.seed, kClientStream, i));
        out.truth.set_labels(id, s.y);
        out.truth.set_distribution(id, std::move(dist));
        if (i < spec.n) {
            fed.clients.emplace_back(id, std::move(s.x), std::move(s.y));
        } else {
            fed.eval_clients.emplace_back(id, std::move(s.x));
        }
    }
    return out;
}

}  // namespace

GeneratedFederation gen_rotated_clusters(const FederationSpec& spec) {
    FederationSpec s = spec;
    s.kind = FederationKind::RotatedClusters;
    s.validate();
    return build(s, rotated_clusters_mixture(s), [&](Rng& rng) {
        return ClientDistribution{s.rotations_deg[rng.uniform_index(s.rotations_deg.size())], {}};
    });
}

GeneratedFederation gen_class_partition(const FederationSpec& spec) {
    FederationSpec s = spec;
    s.kind = FederationKind::ClassPartition;
    s.validate();
    return build(s, class_partition_mixture(s), [&](Rng& rng) {
        ClientDistribution d;
        for (std::size_t c : rng.sample_without_replacement(s.num_classes, s.classes_per_client)) {
            d.class_set.push_back(static_cast<int>(c));
        }
        std::sort(d.class_set.begin(), d.class_set.end());
        return d;
    });
}

Federation assign_labels(const Federation& federation, double p, std::uint64_t seed,
                         GroundTruth* truth) {
    if (!(p > 0.0 && p <= 1.0)) {
        throw ConfigError("assign_labels: p must lie in (0, 1]");
    }
    const std::size_t n = federation.clients.size();
    const auto count = static_cast<std::size_t>(std::llround(p * static_cast<double>(n)));
    if (count == 0) {
        throw ConfigError("assign_labels: round(p * n) = 0 labeled clients");
    }
    Rng rng(derive_seed(seed, kLabelStream));
    std::vector<bool> keep(n, false);
    for (std::size_t i : rng.sample_without_replacement(n, count)) {
        keep[i] = true;
    }
    Federation out;
    out.num_classes = federation.num_classes;
    out.input_dim = federation.input_dim;
    out.eval_clients = federation.eval_clients;
    for (std::size_t i = 0; i < n; ++i) {
        const ClientDataset& c = federation.clients[i];
        if (keep[i]) {
            if (!c.labeled()) {
                throw ContractError("assign_labels: client " + std::to_string(c.id()) +
                                    " was selected but has no labels");
            }
            out.clients.push_back(c);
            continue;
        }
        if (truth && c.labeled()) {
            const auto y = *c.labels();
            truth->set_labels(c.id(), {y.begin(), y.end()});
        }
        out.clients.push_back(c.without_labels());
    }
    return out;
}

GeneratedFederation generate(const FederationSpec& spec) {
    spec.validate();
    GeneratedFederation g;
    switch (spec.kind) {
        case FederationKind::RotatedClusters: g = gen_rotated_clusters(spec); break;
        case FederationKind::ClassPartition: g = gen_class_partition(spec); break;
        case FederationKind::Csv: return load_csv(spec.csv_path);
    }
    g.federation = assign_labels(g.federation, spec.p, spec.seed, &g.truth);
    return g;
}

GeneratedFederation load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError(path + ":1: empty file");
    }
    const auto header = split_line(trim(line));
    if (header.size() < 4 || trim(header[0]) != "client_id" || trim(header[1]) != "split" ||
        trim(header[2]) != "label") {
        throw ParseError(path +
                         ":1: header must be client_id,split,label followed by feature columns");
    }
    const std::size_t dim = header.size() - 3;

    struct Rows {
        std::vector<double> x;
        std::vector<std::string> tags;
        std::vector<std::optional<int>> y;
        std::size_t first_line = 0;
    };
    std::map<int, Rows> groups;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto fields = split_line(line);
        const std::string where = path + ":" + std::to_string(line_no) + ": ";
        if (fields.size() != header.size()) {
            throw ParseError(where + "expected " + std::to_string(header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        }
        char* end = nullptr;
        const std::string id_text = trim(fields[0]);
        errno = 0;
        const long id = std::strtol(id_text.c_str(), &end, 10);
        if (id_text.empty() || *end != '\0' || errno != 0 || id < 0 ||
            id > std::numeric_limits<int>::max()) {
            throw ParseError(where + "bad client_id '" + id_text + "'");
        }
        const std::string tag = trim(fields[1]);
        if (tag != "train" && tag != "val" && tag != "test") {
            throw ParseError(where + "unknown split tag '" + tag + "'");
        }
        Rows& rows = groups[static_cast<int>(id)];
        if (rows.tags.empty()) {
            rows.first_line = line_no;
        }
        const std::string label_text = trim(fields[2]);
        if (label_text.empty()) {
            rows.y.push_back(std::nullopt);
        } else {
            const long label = std::strtol(label_text.c_str(), &end, 10);
            if (*end != '\0' || label < 0 || label > std::numeric_limits<int>::max()) {
                throw ParseError(where + "bad label '" + label_text + "'");
            }
            rows.y.push_back(static_cast<int>(label));
        }
        for (std::size_t j = 0; j < dim; ++j) {
            const std::string text = trim(fields[3 + j]);
            const double v = std::strtod(text.c_str(), &end);
            if (text.empty() || *end != '\0') {
                throw ParseError(where + "bad feature value '" + text + "'");
            }
            rows.x.push_back(v);
        }
        rows.tags.push_back(tag);
    }

    GeneratedFederation out{{}, GroundTruth(FederationKind::Csv, {})};
    Federation& fed = out.federation;
    fed.input_dim = dim;
    int max_label = -1;
    for (auto& [id, rows] : groups) {
        const std::string where = path + ":" + std::to_string(rows.first_line) + ": client " +
                                  std::to_string(id) + ": ";
        const std::size_t labeled_rows = static_cast<std::size_t>(
            std::count_if(rows.y.begin(), rows.y.end(), [](const auto& v) { return v.has_value(); }));
        if (labeled_rows != 0 && labeled_rows != rows.y.size()) {
            throw ParseError(where + "mixes labeled and unlabeled rows");
        }
        std::vector<int> labels;
        for (const auto& v : rows.y) {
            if (v) {
                labels.push_back(*v);
                max_label = std::max(max_label, *v);
            }
        }
        const bool eval_client = std::all_of(rows.tags.begin(), rows.tags.end(),
                                             [](const std::string& t) { return t == "test"; });
        const std::size_t m = rows.tags.size();
        try {
            Tensor x = Tensor::matrix(m, dim, std::move(rows.x));
            if (eval_client) {
                fed.eval_clients.emplace_back(id, std::move(x));
                if (!labels.empty()) {
                    out.truth.set_labels(id, std::move(labels));
                }
            } else if (!labels.empty()) {
                out.truth.set_labels(id, labels);
                fed.clients.emplace_back(id, std::move(x), std::move(labels));
                fed.clients.back().set_split_tags(std::move(rows.tags));
            } else {
                fed.clients.emplace_back(id, std::move(x));
                fed.clients.back().set_split_tags(std::move(rows.tags));
            }
        } catch (const ContractError& e) {
            throw ParseError(where + e.what());
        }
    }
    if (max_label < 0) {
        throw ParseError(path + ": no labels present; class count is undefined");
    }
    fed.num_classes = static_cast<std::size_t>(max_label) + 1;
    return out;
}

void export_csv(const std::string& path, const Federation& federation, const GroundTruth& truth) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << "client_id,split,label";
    for (std::size_t j = 0; j < federation.input_dim; ++j) {
        out << ",x" << j;
    }
    out << '\n';
    auto write_client = [&](const ClientDataset& c, const std::vector<int>* labels,
                            bool eval) {
        const auto& tags = c.split_tags();
        for (std::size_t i = 0; i < c.size(); ++i) {
            out << c.id() << ',' << (eval ? "test" : (tags.empty() ? "train" : tags[i])) << ',';
            if (labels) {
                out << (*labels)[i];
            }
            for (std::size_t j = 0; j < c.input_dim(); ++j) {
                out << ',' << format_double(c.features().at(i, j));
            }
            out << '\n';
        }
    };
    for (const auto& c : federation.clients) {
        std::vector<int> labels;
        if (c.labeled()) {
            const auto y = *c.labels();
            labels.assign(y.begin(), y.end());
        }
        write_client(c, c.labeled() ? &labels : nullptr, false);
    }
    for (const auto& c : federation.eval_clients) {
        write_client(c, truth.has_labels(c.id()) ? &truth.labels(c.id()) : nullptr, true);
    }
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

}  // namespace flowdup
