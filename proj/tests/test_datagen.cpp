#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "flowdup/datagen.hpp"
#include "flowdup/errors.hpp"
#include "support.hpp"

using namespace flowdup;
using namespace testing;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& text) {
    const fs::path dir = fs::temp_directory_path() / "flowdup_tests";
    fs::create_directories(dir);
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p;
}

FederationSpec small_spec(FederationKind kind, std::uint64_t seed) {
    FederationSpec spec;
    spec.kind = kind;
    spec.n = 20;
    spec.n_eval = 5;
    spec.m = 30;
    spec.p = 0.5;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("rotation matrices") {
    const auto id = rotation_matrix(0.0);
    CHECK(id == std::array<double, 4>{1, 0, 0, 1});
    CHECK(rotation_matrix(360.0) == id);
    const auto q = rotation_matrix(90.0);
    CHECK(q == std::array<double, 4>{0, -1, 1, 0});
    // Four quarter turns compose to the identity exactly.
    std::array<double, 4> acc = id;
    for (int i = 0; i < 4; ++i) {
        acc = {acc[0] * q[0] + acc[1] * q[2], acc[0] * q[1] + acc[1] * q[3],
               acc[2] * q[0] + acc[3] * q[2], acc[2] * q[1] + acc[3] * q[3]};
    }
    CHECK(acc == id);
    const auto r = rotation_matrix(30.0);
    CHECK(std::abs(r[0] - std::sqrt(3.0) / 2.0) < 1e-15);
    CHECK(std::abs(r[2] - 0.5) < 1e-15);
}

TEST_CASE("rotated clusters") {
    FederationSpec spec;
    const Mixture mix = rotated_clusters_mixture(spec);
    REQUIRE(mix.means.size() == 8);
    for (const auto& mu : mix.means) CHECK(std::abs(std::hypot(mu[0], mu[1]) - 1.0) < 1e-15);
    double wsum = 0.0;
    for (double w : mix.weights) wsum += w;
    CHECK(std::abs(wsum - 1.0) < 1e-15);

    SUBCASE("rotation zero gives the raw clusters and others rotate them") {
        const Sample raw = sample_client(mix, {0.0, {}}, 50, 9);
        const Sample rot = sample_client(mix, {90.0, {}}, 50, 9);
        const Sample full = sample_client(mix, {360.0, {}}, 50, 9);
        CHECK(raw.y == rot.y);
        CHECK(full.x.values() == raw.x.values());
        for (std::size_t i = 0; i < 50; ++i) {
            CHECK(rot.x.at(i, 0) == -raw.x.at(i, 1));
            CHECK(rot.x.at(i, 1) == raw.x.at(i, 0));
        }
    }

    SUBCASE("empirical cluster means match the rotated analytic means") {
        const double deg = 270.0;
        const auto R = rotation_matrix(deg);
        const Sample s = sample_client(mix, {deg, {}}, 10000, 10);
        std::vector<std::array<double, 2>> sum(8, {0.0, 0.0});
        std::vector<int> count(8, 0);
        for (std::size_t i = 0; i < 10000; ++i) {
            const auto c = static_cast<std::size_t>(s.y[i]);
            sum[c][0] += s.x.at(i, 0);
            sum[c][1] += s.x.at(i, 1);
            ++count[c];
        }
        for (std::size_t c = 0; c < 8; ++c) {
            REQUIRE(count[c] > 0);
            const double ex = R[0] * mix.means[c][0] + R[1] * mix.means[c][1];
            const double ey = R[2] * mix.means[c][0] + R[3] * mix.means[c][1];
            const double tol = 3.0 * mix.sigma / std::sqrt(double(count[c]));
            CHECK(std::abs(sum[c][0] / count[c] - ex) < tol);
            CHECK(std::abs(sum[c][1] / count[c] - ey) < tol);
        }
    }

    SUBCASE("class weights follow the coupling flag") {
        const Sample s = sample_client(mix, {0.0, {}}, 20000, 11);
        std::vector<int> count(8, 0);
        for (int y : s.y) ++count[static_cast<std::size_t>(y)];
        for (std::size_t c = 0; c < 8; ++c) {
            const double p = mix.weights[c];
            CHECK(std::abs(count[c] - 20000 * p) <= 4.0 * std::sqrt(20000 * p * (1 - p)));
        }
        spec.coupling = false;
        for (double w : rotated_clusters_mixture(spec).weights) CHECK(w == doctest::Approx(0.125));
    }

    SUBCASE("non-planar input rejected") {
        spec.input_dim = 3;
        CHECK_THROWS_AS(gen_rotated_clusters(spec), ConfigError);
    }
}

TEST_CASE("generators are pure functions of the spec") {
    for (auto kind : {FederationKind::RotatedClusters, FederationKind::ClassPartition}) {
        const auto a = generate(small_spec(kind, 4));
        const auto b = generate(small_spec(kind, 4));
        const auto c = generate(small_spec(kind, 5));
        REQUIRE(a.federation.clients.size() == 20);
        REQUIRE(a.federation.eval_clients.size() == 5);
        for (std::size_t i = 0; i < 20; ++i) {
            CHECK(a.federation.clients[i].features().values() ==
                  b.federation.clients[i].features().values());
            CHECK(a.federation.clients[i].labeled() == b.federation.clients[i].labeled());
        }
        CHECK(a.federation.clients[0].features().values() !=
              c.federation.clients[0].features().values());

        std::set<int> train_ids, eval_ids;
        for (const auto& cl : a.federation.clients) train_ids.insert(cl.id());
        for (const auto& cl : a.federation.eval_clients) {
            eval_ids.insert(cl.id());
            CHECK_FALSE(cl.labeled());
            CHECK(a.truth.has_labels(cl.id()));
        }
        for (int id : eval_ids) CHECK(train_ids.count(id) == 0);
    }
}

TEST_CASE("class partition") {
    FederationSpec spec = small_spec(FederationKind::ClassPartition, 6);
    spec.num_classes = 6;
    spec.input_dim = 5;

    SUBCASE("all classes per client is iid") {
        spec.classes_per_client = 6;
        const auto g = gen_class_partition(spec);
        for (const auto& c : g.federation.clients) {
            CHECK(g.truth.distribution(c.id()).class_set == std::vector<int>{0, 1, 2, 3, 4, 5});
        }
    }

    SUBCASE("single-label clients") {
        spec.classes_per_client = 1;
        const auto g = gen_class_partition(spec);
        for (const auto& c : g.federation.clients) {
            const std::set<int> labels(c.labels()->begin(), c.labels()->end());
            CHECK(labels.size() == 1);
        }
    }

    SUBCASE("class frequency is uniform over clients") {
        spec.n = 3000;
        spec.m = 2;
        spec.classes_per_client = 2;
        const auto g = gen_class_partition(spec);
        std::vector<int> count(6, 0);
        for (const auto& c : g.federation.clients) {
            for (int k : g.truth.distribution(c.id()).class_set) ++count[static_cast<std::size_t>(k)];
        }
        const double p = 2.0 / 6.0;
        for (int c : count) CHECK(std::abs(c - 3000 * p) <= 3.0 * std::sqrt(3000 * p * (1 - p)));
    }

    spec.classes_per_client = 7;
    CHECK_THROWS_AS(gen_class_partition(spec), ConfigError);
}

TEST_CASE("assign_labels") {
    FederationSpec spec;
    spec.n = 200;
    spec.n_eval = 0;
    spec.m = 4;
    const auto g = gen_rotated_clusters(spec);

    CHECK(assign_labels(g.federation, 1.0, 0).labeled_count() == 200);
    CHECK(assign_labels(g.federation, 0.1, 0).labeled_count() == 20);
    CHECK(assign_labels(g.federation, 0.2, 0).labeled_count() == 40);

    const Federation a = assign_labels(g.federation, 0.3, 7);
    const Federation b = assign_labels(g.federation, 0.3, 7);
    for (std::size_t i = 0; i < 200; ++i) CHECK(a.clients[i].labeled() == b.clients[i].labeled());

    FederationSpec tiny = spec;
    tiny.n = 4;
    const auto small = gen_rotated_clusters(tiny);
    CHECK_THROWS_AS(assign_labels(small.federation, 0.1, 0), ConfigError);
    CHECK_THROWS_AS(assign_labels(small.federation, 0.0, 0), ConfigError);

    GroundTruth truth = g.truth;
    const Federation c = assign_labels(g.federation, 0.5, 3, &truth);
    for (const auto& cl : c.clients) {
        CHECK(truth.has_labels(cl.id()));
        if (!cl.labeled()) {
            CHECK_FALSE(cl.labels().has_value());
            CHECK(cl.split_tags().empty());
        }
    }
}

TEST_CASE("unlabeled clients expose no labels") {
    const auto g = generate(small_spec(FederationKind::RotatedClusters, 8));
    std::size_t unlabeled = 0;
    for (const auto& c : g.federation.clients) {
        if (c.labeled()) continue;
        ++unlabeled;
        CHECK_FALSE(c.labels().has_value());
        CHECK(c.without_labels().labels() == std::nullopt);
    }
    CHECK(unlabeled == 10);
    CHECK_THROWS_AS(GroundTruth().labels(0), EvaluationError);
}

TEST_CASE("bayes classifier") {
    FederationSpec spec;
    spec.n = 8;
    spec.n_eval = 0;
    spec.p = 1.0;
    const auto g = gen_rotated_clusters(spec);
    const double bayes = g.truth.bayes_accuracy(0);
    CHECK(bayes > 0.9);
    CHECK(bayes < 1.0);
    for (int id = 0; id < 4; ++id) {
        const Sample s = g.truth.fresh_sample(id, 20000, 99 + std::uint64_t(id));
        const auto pred = g.truth.bayes_predict(id, s.x);
        std::size_t hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == s.y[i];
        const double acc = double(hit) / 20000.0;
        CHECK(std::abs(acc - bayes) < 4.0 * std::sqrt(bayes * (1 - bayes) / 20000.0));
    }
    CHECK(g.truth.tag(0).rfind("rot", 0) == 0);
}

TEST_CASE("csv ingestion") {
    SUBCASE("small fixture") {
        const auto path = temp_file("fixture.csv",
                                    "client_id,split,label,x0,x1\n"
                                    "0,train,1,0.5,1.5\n"
                                    "0,train,0,-0.5,2\n"
                                    "1,train,,3,4\n"
                                    "1,val,,5,6\n");
        const auto g = load_csv(path.string());
        REQUIRE(g.federation.clients.size() == 2);
        CHECK(g.federation.clients[0].size() == 2);
        CHECK(g.federation.clients[1].size() == 2);
        CHECK(g.federation.clients[0].labeled());
        CHECK_FALSE(g.federation.clients[1].labeled());
        CHECK(g.federation.num_classes == 2);
        CHECK(g.federation.input_dim == 2);
        CHECK(g.federation.clients[1].split_tags() == std::vector<std::string>{"train", "val"});
        CHECK(g.federation.clients[0].features().at(1, 1) == 2.0);
    }

    SUBCASE("round trip") {
        const auto g = generate(small_spec(FederationKind::RotatedClusters, 12));
        const auto path = fs::temp_directory_path() / "flowdup_tests" / "roundtrip.csv";
        fs::create_directories(path.parent_path());
        export_csv(path.string(), g.federation, g.truth);
        const auto back = load_csv(path.string());
        REQUIRE(back.federation.clients.size() == g.federation.clients.size());
        REQUIRE(back.federation.eval_clients.size() == g.federation.eval_clients.size());
        for (std::size_t i = 0; i < g.federation.clients.size(); ++i) {
            const auto& a = g.federation.clients[i];
            const auto& b = back.federation.clients[i];
            CHECK(a.id() == b.id());
            CHECK(a.features().values() == b.features().values());
            CHECK(a.labeled() == b.labeled());
            if (a.labeled()) {
                CHECK(std::vector<int>(a.labels()->begin(), a.labels()->end()) ==
                      std::vector<int>(b.labels()->begin(), b.labels()->end()));
            }
        }
        for (std::size_t i = 0; i < g.federation.eval_clients.size(); ++i) {
            const int id = g.federation.eval_clients[i].id();
            CHECK(back.federation.eval_clients[i].features().values() ==
                  g.federation.eval_clients[i].features().values());
            CHECK(back.truth.labels(id) == g.truth.labels(id));
        }
    }

    SUBCASE("mixed labels within a client") {
        const auto path = temp_file("mixed.csv",
                                    "client_id,split,label,x0\n"
                                    "0,train,1,0.5\n"
                                    "0,train,,1.0\n");
        CHECK_THROWS_AS(load_csv(path.string()), ParseError);
    }

    SUBCASE("ragged row names its line") {
        const auto path = temp_file("ragged.csv",
                                    "client_id,split,label,x0,x1\n"
                                    "0,train,1,0.5,1\n"
                                    "0,train,0,0.5\n");
        try {
            load_csv(path.string());
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find(":3:") != std::string::npos);
        }
    }

    SUBCASE("unknown split") {
        const auto path = temp_file("split.csv",
                                    "client_id,split,label,x0\n"
                                    "0,holdout,1,0.5\n"
                                    "0,train,0,1.5\n");
        CHECK_THROWS_AS(load_csv(path.string()), ParseError);
    }

    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), IoError);
}
