#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "flowdup/datagen.hpp"
#include "flowdup/federation.hpp"
#include "flowdup/objective.hpp"
#include "flowdup/subspace.hpp"

namespace flowdup {

struct BoundConfig {
    double alpha_h = 0.01;      // meta-posterior variance over psi_h
    double alpha_theta = 0.01;  // task-posterior variance over v
    double alpha_r = 0.01;      // hyper-posterior variance over psi_r
    double delta = 0.05;
    std::size_t mc_samples = 32;
    std::uint64_t seed = 0;
    // Use delta / 2 in both logarithmic constants.
    bool strict = false;
    // Draw v' ~ N(h(S_i), alpha_theta I) when scoring, not just psi_h'.
    bool sample_task_posterior = true;

    void validate() const;
};

struct BoundReport {
    double emp_risk = 0.0;
    double term_transductive = 0.0;
    double term_mtl = 0.0;
    double rhs = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double mc_discrepancy = 0.0;
    double kl_meta = 0.0;          // ||psi_h||^2 / (2 alpha_h)
    double mean_complexity = 0.0;  // MC mean of C(A, Q, P)
    std::size_t n = 0;
    std::size_t n_labeled = 0;
    std::size_t m = 0;
    BoundConfig config;
};

// ||mu1 - mu2||^2 / (2 alpha): KL between N(mu1, alpha I) and N(mu2, alpha I).
double kl_iso_gauss(std::span<const double> mu1, std::span<const double> mu2, double alpha);

// E ||mu - psi'||^2 for psi' ~ N(psi_r, alpha_r I), i.e. ||mu - psi_r||^2 + k alpha_r.
double expected_sq_dist(std::span<const double> mu, std::span<const double> psi_r,
                        double alpha_r);

// 3 log(n_L) sqrt(n_L (1 - n_L / n)).
double t_factor(std::size_t n_labeled, std::size_t n);

// sqrt((1 - n_L/n) (kl + log(t(n_L, n) / delta)) / (2 n_L)); exactly 0 when n_L == n.
double transductive_term(double kl, std::size_t n_labeled, std::size_t n, double delta);

// sqrt((complexity + log(8 m n / delta) + 1) / (2 m n)).
double mtl_term(double complexity, std::size_t m, std::size_t n, double delta);

// C(A, Q, P) for the Gaussian family: ||psi_r||^2 / (2 alpha_r) plus
// sum_i E||v_i - psi_r'||^2 / (2 alpha_theta).
double gaussian_complexity(std::span<const std::vector<double>> v, std::span<const double> psi_r,
                           double alpha_theta, double alpha_r);

// Single-task inductive bound: her + sqrt((kl + log(2 sqrt(m_L) / delta)) / (2 m_L)).
double maurer_bound(double emp_risk, double kl, std::size_t m_labeled, double delta);

// Single-task transductive bound: her + transductive_term(kl, m_L, m, delta).
double transductive_bound(double emp_risk, double kl, std::size_t m_labeled, std::size_t m,
                          double delta);

BoundReport bound_rhs(const LearnableState& state, const Federation& federation,
                      const ExpansionBasis& basis, const BoundConfig& cfg);

// Risks of the same stochastic predictor the bound describes, using the
// generator's ground truth: er on fresh draws from every client's
// distribution, ter on every training client's own data, her on labeled clients.
struct PopulationRisk {
    double er = 0.0;
    double ter = 0.0;
    double her = 0.0;
};

PopulationRisk population_risk(const LearnableState& state, const Federation& federation,
                               const ExpansionBasis& basis, const GroundTruth& truth,
                               const BoundConfig& cfg, std::size_t fresh_per_client,
                               std::uint64_t fresh_seed);

}  // namespace flowdup
