#include <doctest.h>

#include <cmath>
#include <numeric>

#include "flowdup/errors.hpp"
#include "flowdup/mlp.hpp"
#include "flowdup/tensor.hpp"
#include "grad_cases.hpp"
#include "support.hpp"

using namespace flowdup;
using namespace testing;

TEST_CASE("tensor construction and shape checks") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
    CHECK_THROWS_AS(Tensor({0, 2}, {}), EmptyBatchError);
    const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m.at(1, 2) == 6.0);
    CHECK_THROWS_AS(Tensor::vector({1.0, 2.0}).rows(), DimensionError);
    CHECK_THROWS_AS(Tensor::vector({1.0, 2.0}).item(), DimensionError);
}

TEST_CASE("matmul") {
    const Tensor I = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor B = Tensor::matrix(2, 2, {3, 4, 5, 6});
    CHECK(matmul(I, B).values() == B.values());
    CHECK(matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4})).item() == 11.0);

    Rng rng(11);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({4, 2}, rng);
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < 4; ++p) s += a.at(i, p) * b.at(p, j);
            CHECK(std::abs(c.at(i, j) - s) < 1e-12);
        }
    }
    try {
        matmul(a, a);
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3x4]") != std::string::npos);
    }
}

TEST_CASE("relu forward and subgradient") {
    CHECK(relu(Tensor::vector({-1, 0, 2})).values() == std::vector<double>{0, 0, 2});
    Tape tape;
    const Tensor x = tape.leaf(Tensor::vector({-1.0, -2.0, -0.5}));
    const Tensor y = relu(x);
    CHECK(y.values() == std::vector<double>{0, 0, 0});
    const Tensor g = tape.backward(sum(y)).of(x);
    CHECK(g.values() == std::vector<double>{0, 0, 0});

    Tape t2;
    const Tensor z = t2.leaf(Tensor::vector({0.0, 1.0}));
    CHECK(t2.backward(sum(relu(z))).of(z).values() == std::vector<double>{0.0, 1.0});

    const auto r = gradient_suite(
        [](const Tensor& v) { return sq_l2(relu(v)); },
        [](Rng& rng) { return random_tensor({12}, rng); }, 100, 3);
    CHECK(r.worst < 1e-6);
}

TEST_CASE("mean_rows") {
    CHECK(mean_rows(Tensor::matrix(1, 3, {1, 2, 3})).values() == std::vector<double>{1, 2, 3});
    CHECK(mean_rows(Tensor::matrix(2, 2, {1, 3, 3, 5})).values() == std::vector<double>{2, 4});
    CHECK_THROWS_AS(gather_rows(Tensor::matrix(2, 2, {1, 2, 3, 4}), {}), EmptyBatchError);

    Rng rng(5);
    for (std::size_t m : {8u, 13u}) {
        const Tensor a = random_tensor({m, 4}, rng);
        std::vector<std::size_t> perm = rng.permutation(m);
        const Tensor b = gather_rows(a, perm);
        // Column sums are taken in sorted order, so any permutation is exact.
        CHECK(mean_rows(a).values() == mean_rows(b).values());
    }
}

TEST_CASE("softmax cross-entropy") {
    const std::vector<int> y0{0};
    CHECK(std::abs(softmax_cross_entropy(Tensor::matrix(1, 4, {2, 2, 2, 2}), y0).item() -
                   std::log(4.0)) < 1e-12);
    CHECK(softmax_cross_entropy(Tensor::matrix(1, 3, {1000, 0, 0}), y0).item() < 1e-6);
    const std::vector<int> bad{3};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor::matrix(1, 3, {0, 0, 0}), bad), LabelError);
    const std::vector<int> neg{-1};
    CHECK_THROWS_AS(softmax_cross_entropy(Tensor::matrix(1, 3, {0, 0, 0}), neg), LabelError);

    // Hand formula: mean of logsumexp - logit[label].
    Rng rng(8);
    const Tensor logits = random_tensor({3, 5}, rng);
    const std::vector<int> labels{4, 0, 2};
    double expected = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < 5; ++j) z += std::exp(logits.at(i, j));
        expected += std::log(z) - logits.at(i, static_cast<std::size_t>(labels[i]));
    }
    CHECK(std::abs(softmax_cross_entropy(logits, labels).item() - expected / 3.0) < 1e-12);

    const auto r = gradient_suite(
        [&](const Tensor& l) { return softmax_cross_entropy(l, labels); },
        [](Rng& g) { return random_tensor({3, 5}, g); }, 100, 9);
    CHECK(r.worst < 1e-5);
}

TEST_CASE("sq_l2 and backward basics") {
    CHECK(sq_l2(Tensor::vector({0, 0, 0})).item() == 0.0);
    CHECK(sq_l2(Tensor::vector({3, 4})).item() == 25.0);

    Tape tape;
    const Tensor x = tape.leaf(Tensor::scalar(3.0));
    CHECK(tape.backward(x).of(x).item() == 1.0);

    Tape t2;
    const Tensor v = t2.leaf(Tensor::vector({1.0, 2.0}));
    CHECK(t2.backward(sq_l2(v)).of(v).values() == std::vector<double>{2.0, 4.0});
    CHECK_THROWS_AS(t2.backward(v), ContractError);

    const auto r = gradient_suite([](const Tensor& a) { return sq_l2(a); },
                                  [](Rng& g) { return random_tensor({7}, g); }, 100, 4);
    CHECK(r.worst < 1e-6);
}

TEST_CASE("finite_diff_grad") {
    const auto ones = finite_diff_grad([](const Tensor& t) { return sum(t).item(); },
                                       Tensor::vector({0.3, -2.0, 5.0}), 1e-5);
    for (double g : ones.values()) CHECK(std::abs(g - 1.0) < 1e-9);
    const auto g = finite_diff_grad([](const Tensor& t) { return sq_l2(t).item(); },
                                    Tensor::vector({1.0, 2.0}), 1e-5);
    CHECK(std::abs(g[0] - 2.0) < 1e-6);
    CHECK(std::abs(g[1] - 4.0) < 1e-6);
    CHECK_THROWS_AS(finite_diff_grad([](const Tensor& t) { return t[0]; }, Tensor::scalar(1), 0.0),
                    DomainError);
}

TEST_CASE("every differentiable op agrees with finite differences") {
    for (const GradCase& c : op_cases()) {
        CAPTURE(c.name);
        const auto r = gradient_suite(c.fn, c.sample, 100, 31);
        CHECK(r.points == 100);
        CHECK(r.worst < 1e-4);
    }
}

TEST_CASE("gradient accumulation is linear") {
    Rng rng(2);
    const Tensor at = random_tensor({5}, rng);
    const Tensor w = random_tensor({5}, rng);
    auto grad = [&](const ScalarFn& f) {
        Tape t;
        const Tensor x = t.leaf(at);
        return t.backward(f(x)).of(x);
    };
    const ScalarFn f = [](const Tensor& x) { return sq_l2(relu(x)); };
    const ScalarFn g = [&](const Tensor& x) { return sq_l2(sub(x, w)); };
    const Tensor gf = grad(f), gg = grad(g);
    const Tensor gsum = grad([&](const Tensor& x) { return add(f(x), g(x)); });
    for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(gsum[i] - gf[i] - gg[i]) < 1e-12);
}

TEST_CASE("forward ops are deterministic") {
    Rng a(77), b(77);
    const Tensor x1 = random_tensor({6, 4}, a), x2 = random_tensor({6, 4}, b);
    const MlpLayout layout({4, 8, 3});
    const Tensor p = Tensor::vector(init_fan_in(layout, 5));
    CHECK(mlp_forward(unflatten(p, layout), x1).values() ==
          mlp_forward(unflatten(p, layout), x2).values());
}

TEST_CASE("argmax ties resolve to the lowest index") {
    const auto idx = argmax_rows(Tensor::matrix(2, 3, {1, 5, 5, 2, 2, 2}));
    CHECK(idx == std::vector<int>{1, 0});
}

TEST_CASE("tapes do not mix") {
    Tape t1, t2;
    const Tensor a = t1.leaf(Tensor::vector({1.0}));
    const Tensor b = t2.leaf(Tensor::vector({2.0}));
    CHECK_THROWS_AS(add(a, b), ContractError);
    CHECK_FALSE(add(Tensor::vector({1.0}), Tensor::vector({1.0})).tracked());
}
