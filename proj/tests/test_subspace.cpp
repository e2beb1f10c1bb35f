#include <doctest.h>

#include <cmath>

#include "flowdup/errors.hpp"
#include "flowdup/mlp.hpp"
#include "flowdup/subspace.hpp"
#include "support.hpp"

using namespace flowdup;
using namespace testing;

namespace {

// Determinant by Gaussian elimination with partial pivoting.
double determinant(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    double det = 1.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        }
        if (a[piv][c] == 0.0) return 0.0;
        if (piv != c) {
            std::swap(a[piv], a[c]);
            det = -det;
        }
        det *= a[c][c];
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t j = c; j < n; ++j) a[r][j] -= f * a[c][j];
        }
    }
    return det;
}

ExpansionBasis identity_basis(std::size_t d, const MlpLayout& layout) {
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    return ExpansionBasis::from_parts(Tensor::matrix(d, d, eye), Tensor::zeros({d}), layout);
}

}  // namespace

TEST_CASE("build_basis is deterministic in its seed") {
    const MlpLayout layout({1, 2});  // d = 4
    const ExpansionBasis a = build_basis(4, 2, 7, layout);
    const ExpansionBasis b = build_basis(4, 2, 7, layout);
    CHECK(a.P.values() == b.P.values());
    CHECK(a.theta0.values() == b.theta0.values());
    const ExpansionBasis c = build_basis(4, 2, 8, layout);
    CHECK(a.P.values() != c.P.values());

    const MlpLayout big({3, 16, 4});
    const ExpansionBasis x = build_basis(big.param_count(), 32, 99, big, false);
    const ExpansionBasis y = build_basis(big.param_count(), 32, 99, big, false);
    CHECK(x.P.values() == y.P.values());
}

TEST_CASE("normalized columns have unit norm") {
    const MlpLayout layout({2, 16, 4});
    const ExpansionBasis basis = build_basis(layout.param_count(), 20, 3, layout);
    for (std::size_t j = 0; j < basis.k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < basis.d; ++i) s += basis.P.at(i, j) * basis.P.at(i, j);
        CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-12);
    }
}

TEST_CASE("unnormalized entries look standard normal") {
    const MlpLayout layout({4, 64, 8});
    const ExpansionBasis basis = build_basis(layout.param_count(), 64, 5, layout, false);
    double mean = 0.0, sq = 0.0;
    for (double p : basis.P.values()) {
        mean += p;
        sq += p * p;
    }
    const double n = static_cast<double>(basis.P.numel());
    mean /= n;
    sq /= n;
    CHECK(std::abs(mean) < 5.0 / std::sqrt(n));
    CHECK(std::abs(sq - 1.0) < 5.0 * std::sqrt(2.0 / n));
}

TEST_CASE("square basis has full rank") {
    const MlpLayout layout({1, 3});  // d = 6
    const ExpansionBasis basis = build_basis(6, 6, 11, layout);
    std::vector<std::vector<double>> gram(6, std::vector<double>(6, 0.0));
    for (std::size_t a = 0; a < 6; ++a) {
        for (std::size_t b = 0; b < 6; ++b) {
            for (std::size_t i = 0; i < 6; ++i) gram[a][b] += basis.P.at(i, a) * basis.P.at(i, b);
        }
    }
    CHECK(determinant(gram) > 0.0);
}

TEST_CASE("build_basis errors") {
    const MlpLayout layout({1, 2});
    CHECK_THROWS_AS(build_basis(4, 5, 0, layout), DimensionError);
    CHECK_THROWS_AS(build_basis(0, 0, 0, layout), DimensionError);
    CHECK_THROWS_AS(build_basis(5, 2, 0, layout), DimensionError);
}

TEST_CASE("theta0 follows the fan-in scheme") {
    const MlpLayout layout({3, 10, 4});
    const ExpansionBasis basis = build_basis(layout.param_count(), 4, 21, layout);
    const auto layers = unflatten(basis.theta0, layout);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const double limit = std::sqrt(6.0 / static_cast<double>(layout.layers()[l].fan_in));
        for (double w : layers[l].weight.values()) CHECK(std::abs(w) <= limit);
        for (double b : layers[l].bias.values()) CHECK(b == 0.0);
    }
}

TEST_CASE("expand") {
    const MlpLayout layout({2, 8, 3});
    const std::size_t d = layout.param_count();
    const ExpansionBasis basis = build_basis(d, 5, 17, layout);
    CHECK(expand(basis, Tensor::zeros({5})).values() == basis.theta0.values());
    CHECK_THROWS_AS(expand(basis, Tensor::zeros({4})), DimensionError);

    const ExpansionBasis eye = identity_basis(d, layout);
    Rng rng(1);
    const Tensor v = random_tensor({d}, rng);
    CHECK(expand(eye, v).values() == v.values());

    SUBCASE("linearity") {
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor v1 = random_tensor({5}, rng, 3.0);
            const Tensor v2 = random_tensor({5}, rng, 3.0);
            const Tensor lhs = sub(expand(basis, add(v1, v2)), basis.theta0);
            const Tensor rhs =
                add(sub(expand(basis, v1), basis.theta0), sub(expand(basis, v2), basis.theta0));
            CHECK(max_abs_diff(lhs.data(), rhs.data()) < 1e-10);
        }
    }

    SUBCASE("backward is P transpose") {
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor g = random_tensor({d}, rng);
            Tape tape;
            const Tensor vv = tape.leaf(random_tensor({5}, rng));
            const Tensor inner = sum(matvec(reshape(g, {1, d}), expand(basis, vv)));
            const Tensor grad = tape.backward(inner).of(vv);
            for (std::size_t j = 0; j < 5; ++j) {
                double expected = 0.0;
                for (std::size_t i = 0; i < d; ++i) expected += basis.P.at(i, j) * g[i];
                CHECK(std::abs(grad[j] - expected) < 1e-10);
            }
        }
    }

    SUBCASE("gradient through a downstream loss") {
        Rng data(4);
        const Tensor X = random_tensor({7, 2}, data);
        const std::vector<int> y{0, 1, 2, 2, 1, 0, 1};
        const auto r = gradient_suite(
            [&](const Tensor& vv) {
                return softmax_cross_entropy(mlp_forward(unflatten(expand(basis, vv), layout), X), y);
            },
            [](Rng& g) { return random_tensor({5}, g); }, 100, 8);
        CHECK(r.points == 100);
        CHECK(r.worst < 1e-4);
    }
}

TEST_CASE("unflatten and flatten") {
    CHECK(MlpLayout({2, 16, 4}).param_count() == 2 * 16 + 16 + 16 * 4 + 4);

    const MlpLayout layout({3, 5, 2});
    Rng rng(3);
    const Tensor flat = random_tensor({layout.param_count()}, rng);
    const auto layers = unflatten(flat, layout);
    REQUIRE(layers.size() == 2);
    CHECK(layers[0].weight.shape() == Shape{3, 5});
    CHECK(layers[0].bias.shape() == Shape{5});
    CHECK(flatten(layers).values() == flat.values());

    for (const auto& layer : unflatten(Tensor::zeros({layout.param_count()}), layout)) {
        for (double w : layer.weight.values()) CHECK(w == 0.0);
        for (double b : layer.bias.values()) CHECK(b == 0.0);
    }
    CHECK_THROWS_AS(unflatten(Tensor::zeros({layout.param_count() - 1}), layout), DimensionError);
}
