#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "flowdup/errors.hpp"
#include "flowdup/eval.hpp"
#include "support.hpp"

using namespace flowdup;
using namespace testing;

namespace {

std::vector<std::vector<double>> random_points(std::size_t n, std::size_t dim, Rng& rng,
                                               const std::vector<double>& spread) {
    std::vector<std::vector<double>> pts(n, std::vector<double>(dim));
    for (auto& p : pts) {
        for (std::size_t j = 0; j < dim; ++j) p[j] = spread[j] * rng.normal();
    }
    return pts;
}

// Top two eigenvectors of the sample covariance, signed like pca2.
std::array<Eigen::VectorXd, 2> eigen_directions(const std::vector<std::vector<double>>& pts) {
    const Eigen::Index n = static_cast<Eigen::Index>(pts.size());
    const Eigen::Index d = static_cast<Eigen::Index>(pts[0].size());
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) X(i, j) = pts[std::size_t(i)][std::size_t(j)];
    }
    const Eigen::MatrixXd centered = X.rowwise() - X.colwise().mean();
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(centered.transpose() * centered);
    std::array<Eigen::VectorXd, 2> out{es.eigenvectors().col(d - 1), es.eigenvectors().col(d - 2)};
    for (auto& v : out) {
        for (Eigen::Index j = 0; j < d; ++j) {
            if (std::abs(v(j)) > 1e-12) {
                if (v(j) < 0) v = -v;
                break;
            }
        }
    }
    return out;
}

ClientModel constant_model(const ExpansionBasis& basis, int cls) {
    // Zero weights and a single large output bias.
    std::vector<double> theta(basis.d, 0.0);
    const std::size_t out = basis.layout.output_dim();
    theta[basis.d - out + static_cast<std::size_t>(cls)] = 10.0;
    return ClientModel{basis.layout, Tensor::vector(std::move(theta))};
}

}  // namespace

TEST_CASE("summarize") {
    const AccuracySummary s = summarize({0.5, 1.0, 0.0, 0.5});
    CHECK(s.mean == 0.5);
    CHECK(s.std == doctest::Approx(std::sqrt(0.125)));
    CHECK(s.per_client.size() == 4);
    const AccuracySummary one = summarize({0.7});
    CHECK(one.mean == 0.7);
    CHECK(one.std == 0.0);
    CHECK(summarize({}).mean == 0.0);
}

TEST_CASE("evaluate_models scores against ground truth only") {
    FederationSpec spec;
    spec.n = 4;
    spec.n_eval = 3;
    spec.m = 30;
    spec.p = 0.5;
    const GeneratedFederation g = generate(spec);
    const ExpansionBasis basis = make_basis(tiny_config(), 2, spec.num_classes);

    const EvalReport r = evaluate_models(g.federation.eval_clients, g.truth,
                                         [&](const ClientDataset& c) {
                                             CHECK_FALSE(c.labeled());
                                             return constant_model(basis, 0);
                                         });
    REQUIRE(r.client_ids.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& truth = g.truth.labels(r.client_ids[i]);
        const double zeros =
            static_cast<double>(std::count(truth.begin(), truth.end(), 0)) / double(truth.size());
        CHECK(r.transductive.per_client[i] == doctest::Approx(zeros).epsilon(1e-15));
    }
    CHECK_FALSE(r.inductive.has_value());

    SUBCASE("inductive score on fresh draws") {
        EvalOptions opt;
        opt.fresh_per_client = 200;
        opt.fresh_seed = 9;
        const EvalReport ind = evaluate_models(g.federation.eval_clients, g.truth,
                                               [&](const ClientDataset&) {
                                                   return constant_model(basis, 1);
                                               },
                                               opt);
        REQUIRE(ind.inductive.has_value());
        for (double a : ind.inductive->per_client) CHECK(a < 0.5);
    }

    SUBCASE("missing truth is an evaluation error") {
        GroundTruth empty(FederationKind::RotatedClusters, g.truth.mixture());
        CHECK_THROWS_AS(evaluate_models(g.federation.eval_clients, empty,
                                        [&](const ClientDataset&) {
                                            return constant_model(basis, 0);
                                        }),
                        EvaluationError);
    }
}

TEST_CASE("evaluate is deterministic and order independent per client") {
    FederationSpec spec;
    spec.n = 8;
    spec.n_eval = 4;
    spec.m = 20;
    spec.p = 0.5;
    const GeneratedFederation g = generate(spec);
    TrainConfig cfg = tiny_config();
    cfg.rounds = 2;
    const ExpansionBasis basis = make_basis(cfg, 2, spec.num_classes);
    const LearnableState state = train(g.federation, cfg).state;

    const EvalReport a = evaluate(state, basis, g.federation, g.truth);
    const EvalReport b = evaluate(state, basis, g.federation, g.truth);
    CHECK(a.transductive.per_client == b.transductive.per_client);

    Federation reversed = g.federation;
    std::reverse(reversed.eval_clients.begin(), reversed.eval_clients.end());
    const EvalReport c = evaluate(state, basis, reversed, g.truth);
    for (std::size_t i = 0; i < a.client_ids.size(); ++i) {
        const auto it = std::find(c.client_ids.begin(), c.client_ids.end(), a.client_ids[i]);
        REQUIRE(it != c.client_ids.end());
        CHECK(c.transductive.per_client[std::size_t(it - c.client_ids.begin())] ==
              a.transductive.per_client[i]);
    }
}

TEST_CASE("pca2 matches a dense eigensolver") {
    Rng rng(5);
    for (std::size_t dim : {2u, 3u, 8u}) {
        CAPTURE(dim);
        std::vector<double> spread(dim);
        for (std::size_t j = 0; j < dim; ++j) spread[j] = 4.0 / double(j + 1) + 0.1 * double(j);
        const auto pts = random_points(60, dim, rng, spread);
        const auto dirs = pca2_directions(pts);
        const auto ref = eigen_directions(pts);
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t j = 0; j < dim; ++j) {
                CHECK(std::abs(dirs[c][j] - ref[c](Eigen::Index(j))) < 1e-6);
            }
        }
        const auto proj = pca2(pts);
        double mean0 = 0.0, mean1 = 0.0;
        for (const auto& p : proj) {
            mean0 += p[0];
            mean1 += p[1];
        }
        CHECK(std::abs(mean0) < 1e-9);
        CHECK(std::abs(mean1) < 1e-9);
    }

    SUBCASE("rank-one input") {
        std::vector<std::vector<double>> line;
        for (int i = 0; i < 10; ++i) line.push_back({double(i), 2.0 * double(i), 0.0});
        const auto dirs = pca2_directions(line);
        CHECK(dirs[0][0] == doctest::Approx(1.0 / std::sqrt(5.0)));
        CHECK(dirs[0][1] == doctest::Approx(2.0 / std::sqrt(5.0)));
        double dot = 0.0, nrm = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            dot += dirs[0][j] * dirs[1][j];
            nrm += dirs[1][j] * dirs[1][j];
        }
        CHECK(std::abs(dot) < 1e-9);
        CHECK(nrm == doctest::Approx(1.0));
    }

    CHECK_THROWS_AS(pca2({{1.0, 2.0}}), ContractError);
    CHECK_THROWS_AS(pca2({{1.0}, {2.0}}), DimensionError);
    CHECK_THROWS_AS(pca2({{1.0, 2.0}, {1.0, 2.0, 3.0}}), DimensionError);
}

TEST_CASE("cluster_separation") {
    EmbeddingDump dump;
    dump.rows.push_back({0, {0.0, 0.0}, {}, "a"});
    dump.rows.push_back({1, {0.0, 1.0}, {}, "a"});
    dump.rows.push_back({2, {3.0, 0.0}, {}, "b"});
    dump.rows.push_back({3, {3.0, 1.0}, {}, "b"});
    const Separation s = cluster_separation(dump);
    CHECK(s.intra == 1.0);
    CHECK(s.inter == doctest::Approx((3.0 + 3.0 + std::sqrt(10.0) * 2.0) / 4.0));

    EmbeddingDump lonely = dump;
    lonely.rows.push_back({4, {9.0, 9.0}, {}, "c"});
    CHECK_THROWS_AS(cluster_separation(lonely), ContractError);
    EmbeddingDump single = dump;
    for (auto& r : single.rows) r.tag = "a";
    CHECK_THROWS_AS(cluster_separation(single), ContractError);
}

TEST_CASE("dump_embeddings") {
    FederationSpec spec;
    spec.n = 4;
    spec.n_eval = 6;
    spec.m = 20;
    const GeneratedFederation g = generate(spec);
    TrainConfig cfg = tiny_config();
    const LearnableState state = LearnableState::initial(make_hypernet(cfg, 2), cfg.lambda);
    const EmbeddingDump d = dump_embeddings(state, g.federation.eval_clients, &g.truth);
    REQUIRE(d.rows.size() == 6);
    for (std::size_t i = 0; i < d.rows.size(); ++i) {
        const ClientDataset& c = g.federation.eval_clients[i];
        CHECK(d.rows[i].client_id == c.id());
        CHECK(d.rows[i].tag == g.truth.tag(c.id()));
        CHECK(d.rows[i].embedding ==
              embed(state.hypernet(), c.features()).values());
    }
    const EmbeddingDump untagged = dump_embeddings(state, g.federation.eval_clients);
    for (const auto& r : untagged.rows) CHECK(r.tag == "unknown");
}
