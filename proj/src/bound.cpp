#include "flowdup/bound.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "flowdup/errors.hpp"
#include "flowdup/hypernet.hpp"
#include "flowdup/rng.hpp"

namespace flowdup {

namespace {
constexpr std::uint64_t kPsiStream = 0x50534948ULL;   // "PSIH"
constexpr std::uint64_t kTaskStream = 0x5441534bULL;  // "TASK"
constexpr std::uint64_t kCheckStream = 0x43484b53ULL; // "CHKS"
constexpr std::size_t kCheckDraws = 4096;

void check_variance(double alpha, const char* who) {
    if (!(alpha > 0.0)) {
        throw DomainError(std::string(who) + ": variance must be positive");
    }
}

std::vector<double> perturbed(std::span<const double> mean, double variance, Rng& rng) {
    const double sd = std::sqrt(variance);
    std::vector<double> out(mean.begin(), mean.end());
    for (double& x : out) {
        x += sd * rng.normal();
    }
    return out;
}

double error_rate(const std::vector<int>& pred, std::span<const int> truth) {
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        wrong += pred[i] != truth[i] ? 1 : 0;
    }
    return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

// One draw of the stochastic predictor: psi_h' for MC sample s, then each
// client's model from its own training features.
struct Draw {
    std::vector<std::vector<double>> v;  // h(S_i; psi_h') per training client
    std::vector<Tensor> theta;           // theta0 + P v', per training client
};

Draw draw_models(const LearnableState& state, const Federation& federation,
                 const ExpansionBasis& basis, const BoundConfig& cfg, std::size_t s) {
    Rng psi_rng(derive_seed(cfg.seed, kPsiStream, s));
    const Tensor psi = Tensor::vector(perturbed(state.hyper, cfg.alpha_h, psi_rng));
    Draw d;
    for (const ClientDataset& c : federation.clients) {
        const Tensor v = hyper_forward(state.arch, psi, c.features());
        d.v.push_back(v.values());
        std::vector<double> vt = v.values();
        if (cfg.sample_task_posterior) {
            Rng task_rng(derive_seed(cfg.seed, kTaskStream,
                                     derive_seed(s, static_cast<std::uint64_t>(c.id()))));
            vt = perturbed(vt, cfg.alpha_theta, task_rng);
        }
        d.theta.push_back(expand(basis, Tensor::vector(std::move(vt))));
    }
    return d;
}

std::vector<int> predict_with(const ExpansionBasis& basis, const Tensor& theta, const Tensor& X) {
    return argmax_rows(mlp_forward(unflatten(theta, basis.layout), X));
}

struct Counts {
    std::size_t n = 0;
    std::size_t n_labeled = 0;
    std::size_t m = 0;
};

Counts count_clients(const Federation& federation) {
    Counts c;
    c.n = federation.clients.size();
    c.m = federation.clients.empty() ? 0 : federation.clients.front().size();
    bool unequal = false;
    for (const auto& client : federation.clients) {
        c.n_labeled += client.labeled() ? 1 : 0;
        unequal = unequal || client.size() != c.m;
        c.m = std::min(c.m, client.size());
    }
    if (unequal) {
        std::clog << "note: client sizes differ; the bound uses m = min m_i = " << c.m << "\n";
    }
    return c;
}

}  // namespace

void BoundConfig::validate() const {
    if (!(alpha_h > 0.0 && alpha_theta > 0.0 && alpha_r > 0.0)) {
        throw ConfigError("bound variances must be positive");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
        throw ConfigError("bound delta must lie in (0, 1)");
    }
    if (mc_samples < 1) {
        throw ConfigError("bound mc_samples must be >= 1");
    }
}

double kl_iso_gauss(std::span<const double> mu1, std::span<const double> mu2, double alpha) {
    check_variance(alpha, "kl_iso_gauss");
    if (mu1.size() != mu2.size()) {
        throw DimensionError("kl_iso_gauss: mean lengths " + std::to_string(mu1.size()) + " and " +
                             std::to_string(mu2.size()));
    }
    double d2 = 0.0;
    for (std::size_t i = 0; i < mu1.size(); ++i) {
        const double d = mu1[i] - mu2[i];
        d2 += d * d;
    }
    return d2 / (2.0 * alpha);
}

double expected_sq_dist(std::span<const double> mu, std::span<const double> psi_r,
                        double alpha_r) {
    check_variance(alpha_r, "expected_sq_dist");
    if (mu.size() != psi_r.size()) {
        throw DimensionError("expected_sq_dist: lengths " + std::to_string(mu.size()) + " and " +
                             std::to_string(psi_r.size()));
    }
    double d2 = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double d = mu[i] - psi_r[i];
        d2 += d * d;
    }
    return d2 + static_cast<double>(mu.size()) * alpha_r;
}

double t_factor(std::size_t n_labeled, std::size_t n) {
    if (n_labeled < 2) {
        throw DomainError("t_factor: needs n_L >= 2 (log(n_L) must be positive)");
    }
    if (n_labeled > n) {
        throw DomainError("t_factor: n_L = " + std::to_string(n_labeled) + " exceeds n = " +
                          std::to_string(n));
    }
    if (n_labeled == n) {
        return 0.0;
    }
    const double nl = static_cast<double>(n_labeled);
    return 3.0 * std::log(nl) * std::sqrt(nl * (1.0 - nl / static_cast<double>(n)));
}

double transductive_term(double kl, std::size_t n_labeled, std::size_t n, double delta) {
    const double t = t_factor(n_labeled, n);
    if (n_labeled == n) {
        return 0.0;
    }
    const double nl = static_cast<double>(n_labeled);
    const double arg =
        (1.0 - nl / static_cast<double>(n)) * (kl + std::log(t / delta)) / (2.0 * nl);
    return std::sqrt(std::max(0.0, arg));
}

double mtl_term(double complexity, std::size_t m, std::size_t n, double delta) {
    const double mn = static_cast<double>(m) * static_cast<double>(n);
    return std::sqrt((complexity + std::log(8.0 * mn / delta) + 1.0) / (2.0 * mn));
}

double gaussian_complexity(std::span<const std::vector<double>> v, std::span<const double> psi_r,
                           double alpha_theta, double alpha_r) {
    check_variance(alpha_theta, "gaussian_complexity");
    const std::vector<double> zero(psi_r.size(), 0.0);
    double total = kl_iso_gauss(psi_r, zero, alpha_r);
    for (const auto& vi : v) {
        total += expected_sq_dist(vi, psi_r, alpha_r) / (2.0 * alpha_theta);
    }
    return total;
}

double maurer_bound(double emp_risk, double kl, std::size_t m_labeled, double delta) {
    const double ml = static_cast<double>(m_labeled);
    return emp_risk + std::sqrt((kl + std::log(2.0 * std::sqrt(ml) / delta)) / (2.0 * ml));
}

double transductive_bound(double emp_risk, double kl, std::size_t m_labeled, std::size_t m,
                          double delta) {
    return emp_risk + transductive_term(kl, m_labeled, m, delta);
}

BoundReport bound_rhs(const LearnableState& state, const Federation& federation,
                      const ExpansionBasis& basis, const BoundConfig& cfg) {
    cfg.validate();
    const Counts counts = count_clients(federation);
    if (counts.n_labeled < 2 || counts.n_labeled > counts.n) {
        throw ConfigError("bound needs 2 <= n_L <= n labeled clients, got n_L = " +
                          std::to_string(counts.n_labeled) + ", n = " + std::to_string(counts.n));
    }
    if (counts.m < 1) {
        throw ConfigError("bound needs m >= 1");
    }

    BoundReport r;
    r.config = cfg;
    r.n = counts.n;
    r.n_labeled = counts.n_labeled;
    r.m = counts.m;
    const double d = cfg.strict ? cfg.delta / 2.0 : cfg.delta;

    const std::vector<double> zero_h(state.hyper.size(), 0.0);
    r.kl_meta = kl_iso_gauss(state.hyper, zero_h, cfg.alpha_h);
    if (counts.n_labeled < counts.n) {
        r.c1 = std::log(t_factor(counts.n_labeled, counts.n) / d);
    }
    r.term_transductive = transductive_term(r.kl_meta, counts.n_labeled, counts.n, d);
    r.c2 = std::log(8.0 * static_cast<double>(counts.m) * static_cast<double>(counts.n) / d) + 1.0;

    double risk_sum = 0.0, mtl_sum = 0.0, complexity_sum = 0.0;
    for (std::size_t s = 0; s < cfg.mc_samples; ++s) {
        const Draw draw = draw_models(state, federation, basis, cfg, s);
        double labeled_err = 0.0;
        for (std::size_t i = 0; i < federation.clients.size(); ++i) {
            const ClientDataset& c = federation.clients[i];
            if (!c.labeled()) {
                continue;
            }
            labeled_err += error_rate(predict_with(basis, draw.theta[i], c.features()), *c.labels());
        }
        risk_sum += labeled_err / static_cast<double>(counts.n_labeled);
        const double complexity =
            gaussian_complexity(draw.v, state.reg, cfg.alpha_theta, cfg.alpha_r);
        complexity_sum += complexity;
        mtl_sum += mtl_term(complexity, counts.m, counts.n, d);

        if (s == 0) {
            // Monte Carlo cross-check of the two closed forms feeding C(A, Q, P).
            Rng check(derive_seed(cfg.seed, kCheckStream));
            const std::vector<double>& mu = draw.v.front();
            double sq_mc = 0.0, kl_mc = 0.0;
            const std::vector<double> zero_r(state.reg.size(), 0.0);
            for (std::size_t j = 0; j < kCheckDraws; ++j) {
                const std::vector<double> pr = perturbed(state.reg, cfg.alpha_r, check);
                double d2 = 0.0, log_ratio = 0.0;
                for (std::size_t q = 0; q < pr.size(); ++q) {
                    d2 += (mu[q] - pr[q]) * (mu[q] - pr[q]);
                    const double a = pr[q] - state.reg[q];
                    log_ratio += (pr[q] * pr[q] - a * a) / (2.0 * cfg.alpha_r);
                }
                sq_mc += d2;
                kl_mc += log_ratio;
            }
            sq_mc /= static_cast<double>(kCheckDraws);
            kl_mc /= static_cast<double>(kCheckDraws);
            r.mc_discrepancy =
                std::max(std::abs(sq_mc - expected_sq_dist(mu, state.reg, cfg.alpha_r)),
                         std::abs(kl_mc - kl_iso_gauss(state.reg, zero_r, cfg.alpha_r)));
        }
    }
    const double S = static_cast<double>(cfg.mc_samples);
    r.emp_risk = risk_sum / S;
    r.term_mtl = mtl_sum / S;
    r.mean_complexity = complexity_sum / S;
    r.rhs = r.emp_risk + r.term_transductive + r.term_mtl;
    return r;
}

PopulationRisk population_risk(const LearnableState& state, const Federation& federation,
                               const ExpansionBasis& basis, const GroundTruth& truth,
                               const BoundConfig& cfg, std::size_t fresh_per_client,
                               std::uint64_t fresh_seed) {
    cfg.validate();
    if (fresh_per_client < 1) {
        throw ConfigError("population_risk: fresh_per_client must be >= 1");
    }
    std::vector<Sample> fresh;
    for (const ClientDataset& c : federation.clients) {
        fresh.push_back(truth.fresh_sample(
            c.id(), fresh_per_client, derive_seed(fresh_seed, static_cast<std::uint64_t>(c.id()))));
    }
    PopulationRisk out;
    std::size_t n_labeled = 0;
    for (const auto& c : federation.clients) {
        n_labeled += c.labeled() ? 1 : 0;
    }
    const double n = static_cast<double>(federation.clients.size());
    for (std::size_t s = 0; s < cfg.mc_samples; ++s) {
        const Draw draw = draw_models(state, federation, basis, cfg, s);
        double er = 0.0, ter = 0.0, her = 0.0;
        for (std::size_t i = 0; i < federation.clients.size(); ++i) {
            const ClientDataset& c = federation.clients[i];
            er += error_rate(predict_with(basis, draw.theta[i], fresh[i].x), fresh[i].y);
            const double train_err =
                error_rate(predict_with(basis, draw.theta[i], c.features()), truth.labels(c.id()));
            ter += train_err;
            her += c.labeled() ? train_err : 0.0;
        }
        out.er += er / n;
        out.ter += ter / n;
        out.her += n_labeled > 0 ? her / static_cast<double>(n_labeled) : 0.0;
    }
    const double S = static_cast<double>(cfg.mc_samples);
    out.er /= S;
    out.ter /= S;
    out.her /= S;
    return out;
}

}  // namespace flowdup
