#include "flowdup/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "flowdup/errors.hpp"
#include "flowdup/hypernet.hpp"
#include "flowdup/rng.hpp"

namespace flowdup {

namespace {

double accuracy(const std::vector<int>& pred, std::span<const int> truth) {
    if (pred.size() != truth.size()) {
        throw EvaluationError("ground truth has " + std::to_string(truth.size()) +
                              " labels for " + std::to_string(pred.size()) + " rows");
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hit += pred[i] == truth[i] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

using Matrix = std::vector<std::vector<double>>;

std::vector<double> mat_vec(const Matrix& A, const std::vector<double>& x) {
    std::vector<double> y(A.size(), 0.0);
    for (std::size_t i = 0; i < A.size(); ++i) {
        for (std::size_t j = 0; j < x.size(); ++j) {
            y[i] += A[i][j] * x[j];
        }
    }
    return y;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

void remove_component(std::vector<double>& x, const std::vector<double>& dir) {
    const double c = dot(x, dir);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= c * dir[i];
}

void fix_sign(std::vector<double>& v) {
    for (double x : v) {
        if (std::abs(x) > 1e-12) {
            if (x < 0.0) {
                for (double& y : v) y = -y;
            }
            return;
        }
    }
}

// Start vector: the candidate with the largest norm after removing `avoid`,
// falling back to the standard basis.
std::vector<double> start_vector(const Matrix& candidates, const std::vector<double>* avoid,
                                 std::size_t dim) {
    std::vector<double> best;
    double best_norm = 0.0;
    auto consider = [&](std::vector<double> c) {
        if (avoid) remove_component(c, *avoid);
        const double nrm = norm(c);
        if (nrm > best_norm * (1.0 + 1e-12)) {
            best_norm = nrm;
            best = std::move(c);
        }
    };
    for (const auto& c : candidates) consider(c);
    if (best_norm < 1e-12) {
        best_norm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            std::vector<double> e(dim, 0.0);
            e[j] = 1.0;
            consider(std::move(e));
        }
    }
    for (double& x : best) x /= best_norm;
    return best;
}

std::vector<double> power_iteration(const Matrix& C, std::vector<double> v,
                                    const std::vector<double>* avoid, const PcaOptions& opt) {
    for (std::size_t it = 0; it < opt.max_iterations; ++it) {
        std::vector<double> w = mat_vec(C, v);
        if (avoid) remove_component(w, *avoid);
        const double lambda = norm(w);
        if (lambda < 1e-300) {
            break;  // v spans (part of) the null space; any unit vector there is valid
        }
        for (double& x : w) x /= lambda;
        double change = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) change = std::max(change, std::abs(w[i] - v[i]));
        v = std::move(w);
        if (change < opt.tolerance) {
            break;
        }
    }
    return v;
}

}  // namespace

AccuracySummary summarize(std::vector<double> per_client) {
    AccuracySummary s;
    s.per_client = std::move(per_client);
    if (s.per_client.empty()) {
        return s;
    }
    const double n = static_cast<double>(s.per_client.size());
    for (double a : s.per_client) s.mean += a;
    s.mean /= n;
    double var = 0.0;
    for (double a : s.per_client) var += (a - s.mean) * (a - s.mean);
    s.std = std::sqrt(var / n);
    return s;
}

EvalReport evaluate_models(const std::vector<ClientDataset>& eval_clients,
                           const GroundTruth& truth, const ModelFactory& factory,
                           const EvalOptions& options) {
    const auto started = std::chrono::steady_clock::now();
    EvalReport report;
    std::vector<double> trans, induct;
    for (const ClientDataset& client : eval_clients) {
        const std::vector<int>& y = truth.labels(client.id());
        const ClientModel model = factory(client);
        trans.push_back(accuracy(model.predict(client.features()), y));
        if (options.fresh_per_client > 0) {
            const Sample s = truth.fresh_sample(
                client.id(), options.fresh_per_client,
                derive_seed(options.fresh_seed, static_cast<std::uint64_t>(client.id())));
            induct.push_back(accuracy(model.predict(s.x), s.y));
        }
        report.client_ids.push_back(client.id());
    }
    report.transductive = summarize(std::move(trans));
    if (options.fresh_per_client > 0) {
        report.inductive = summarize(std::move(induct));
    }
    report.runtime_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return report;
}

EvalReport evaluate(const LearnableState& state, const ExpansionBasis& basis,
                    const Federation& federation, const GroundTruth& truth,
                    const EvalOptions& options) {
    EvalReport r = evaluate_models(
        federation.eval_clients, truth,
        [&](const ClientDataset& c) { return generate_model(state, basis, c.features()); },
        options);
    r.method = method_name(Method::FLowDUP);
    r.k = basis.k;
    return r;
}

EvalReport evaluate(const GlobalModelState& model, const ExpansionBasis& basis,
                    const Federation& federation, const GroundTruth& truth,
                    const EvalOptions& options) {
    const ClientModel shared = global_model(model, basis);
    EvalReport r = evaluate_models(
        federation.eval_clients, truth, [&](const ClientDataset&) { return shared; }, options);
    r.method = method_name(model.method);
    r.k = basis.k;
    return r;
}

EmbeddingDump dump_embeddings(const LearnableState& state, const std::vector<ClientDataset>& clients,
                              const GroundTruth* truth) {
    EmbeddingDump dump;
    const Tensor psi = Tensor::vector(state.hyper);
    std::vector<std::vector<double>> points;
    for (const ClientDataset& c : clients) {
        EmbeddingRow row;
        row.client_id = c.id();
        row.embedding = embed(state.arch, psi, c.features()).values();
        row.tag = truth ? truth->tag(c.id()) : "unknown";
        points.push_back(row.embedding);
        dump.rows.push_back(std::move(row));
    }
    if (points.size() >= 2) {
        const auto proj = pca2(points);
        for (std::size_t i = 0; i < proj.size(); ++i) {
            dump.rows[i].projection = proj[i];
        }
    }
    return dump;
}

std::array<std::vector<double>, 2> pca2_directions(const std::vector<std::vector<double>>& points,
                                                   const PcaOptions& options) {
    if (points.size() < 2) {
        throw ContractError("pca2 needs at least 2 points, got " + std::to_string(points.size()));
    }
    const std::size_t dim = points.front().size();
    if (dim < 2) {
        throw DimensionError("pca2 needs points of dimension >= 2");
    }
    for (const auto& p : points) {
        if (p.size() != dim) {
            throw DimensionError("pca2: points have different dimensions");
        }
    }
    std::vector<double> mean(dim, 0.0);
    for (const auto& p : points) {
        for (std::size_t j = 0; j < dim; ++j) mean[j] += p[j];
    }
    for (double& x : mean) x /= static_cast<double>(points.size());
    Matrix centered;
    for (const auto& p : points) {
        std::vector<double> c(dim);
        for (std::size_t j = 0; j < dim; ++j) c[j] = p[j] - mean[j];
        centered.push_back(std::move(c));
    }
    Matrix cov(dim, std::vector<double>(dim, 0.0));
    for (const auto& c : centered) {
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < dim; ++j) cov[i][j] += c[i] * c[j];
        }
    }
    for (auto& row : cov) {
        for (double& x : row) x /= static_cast<double>(points.size());
    }

    std::vector<double> v1 = power_iteration(cov, start_vector(centered, nullptr, dim), nullptr,
                                             options);
    // Deflated second direction, kept orthogonal to the first.
    std::vector<double> v2 = power_iteration(cov, start_vector(centered, &v1, dim), &v1, options);
    remove_component(v2, v1);
    const double n2 = norm(v2);
    for (double& x : v2) x /= n2;
    fix_sign(v1);
    fix_sign(v2);
    return {std::move(v1), std::move(v2)};
}

std::vector<std::array<double, 2>> pca2(const std::vector<std::vector<double>>& points,
                                        const PcaOptions& options) {
    const auto dirs = pca2_directions(points, options);
    const std::size_t dim = points.front().size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& p : points) {
        for (std::size_t j = 0; j < dim; ++j) mean[j] += p[j];
    }
    for (double& x : mean) x /= static_cast<double>(points.size());
    std::vector<std::array<double, 2>> out;
    for (const auto& p : points) {
        std::array<double, 2> q{0.0, 0.0};
        for (std::size_t j = 0; j < dim; ++j) {
            q[0] += (p[j] - mean[j]) * dirs[0][j];
            q[1] += (p[j] - mean[j]) * dirs[1][j];
        }
        out.push_back(q);
    }
    return out;
}

Separation cluster_separation(const EmbeddingDump& dump) {
    std::map<std::string, std::size_t> group_size;
    for (const auto& row : dump.rows) ++group_size[row.tag];
    for (const auto& [tag, size] : group_size) {
        if (size < 2) {
            throw ContractError("cluster_separation: group '" + tag + "' has " +
                                std::to_string(size) + " member(s); need at least 2");
        }
    }
    if (group_size.size() < 2) {
        throw ContractError("cluster_separation needs at least two groups");
    }
    double intra = 0.0, inter = 0.0;
    std::size_t n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < dump.rows.size(); ++i) {
        for (std::size_t j = i + 1; j < dump.rows.size(); ++j) {
            const auto& a = dump.rows[i].embedding;
            const auto& b = dump.rows[j].embedding;
            double d2 = 0.0;
            for (std::size_t q = 0; q < a.size(); ++q) d2 += (a[q] - b[q]) * (a[q] - b[q]);
            if (dump.rows[i].tag == dump.rows[j].tag) {
                intra += std::sqrt(d2);
                ++n_intra;
            } else {
                inter += std::sqrt(d2);
                ++n_inter;
            }
        }
    }
    return {intra / static_cast<double>(n_intra), inter / static_cast<double>(n_inter)};
}

}  // namespace flowdup
