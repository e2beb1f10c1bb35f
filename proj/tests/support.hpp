#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "flowdup/federation.hpp"
#include "flowdup/rng.hpp"
#include "flowdup/runtime.hpp"
#include "flowdup/tensor.hpp"

namespace testing {

using namespace flowdup;

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

// Elementwise |a - b| / max(|a| + |b|, floor), maximized.
inline double max_rel_err(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double den = std::max(std::abs(a[i]) + std::abs(b[i]), floor);
        worst = std::max(worst, std::abs(a[i] - b[i]) / den);
    }
    return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

using ScalarFn = std::function<Tensor(const Tensor&)>;

struct GradCheck {
    double rel_err = 0.0;
    bool near_kink = false;
};

// Compares backward() against central differences at `at`. A point is
// flagged as near a kink when the difference quotients at h and h/4
// disagree, which a function smooth on [x - h, x + h] cannot do.
inline GradCheck check_gradient(const ScalarFn& fn, const Tensor& at, double h = 1e-5) {
    Tape tape;
    const Tensor x = tape.leaf(at);
    const Tensor y = fn(x);
    const Tensor g = tape.backward(y).of(x);
    auto value = [&](const Tensor& p) { return fn(p).item(); };
    const Tensor fd = finite_diff_grad(value, at, h);
    const Tensor fd_fine = finite_diff_grad(value, at, h / 4.0);
    GradCheck out;
    out.near_kink = max_rel_err(fd.data(), fd_fine.data()) > 1e-5;
    out.rel_err = max_rel_err(g.data(), fd.data());
    return out;
}

struct GradSuiteResult {
    double worst = 0.0;
    int points = 0;
    int excluded = 0;
};

// Runs check_gradient at `points` random points drawn by `sample`, skipping
// (and resampling) kink points.
inline GradSuiteResult gradient_suite(const ScalarFn& fn, const std::function<Tensor(Rng&)>& sample,
                                      int points, std::uint64_t seed) {
    Rng rng(seed);
    GradSuiteResult r;
    int attempts = 0;
    while (r.points < points && attempts < 4 * points) {
        ++attempts;
        const GradCheck c = check_gradient(fn, sample(rng));
        if (c.near_kink) {
            ++r.excluded;
            continue;
        }
        r.worst = std::max(r.worst, c.rel_err);
        ++r.points;
    }
    return r;
}

// Small architecture used wherever finite differences sweep every coordinate.
inline TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.f_hidden = {5};
    cfg.h1_hidden = {8};
    cfg.embed_dim = 4;
    cfg.h2_hidden = {8};
    cfg.k = 6;
    cfg.rounds = 3;
    cfg.cohort_size = 4;
    cfg.batch_size = 10;
    return cfg;
}

// Two Gaussian blobs per client, labels 0/1, optionally offset by client.
inline Federation toy_federation(std::size_t n_labeled, std::size_t n_unlabeled, std::size_t m,
                                 std::uint64_t seed, std::size_t n_eval = 0) {
    Federation fed;
    fed.num_classes = 2;
    fed.input_dim = 2;
    Rng rng(seed);
    auto make = [&](int id, bool labeled) {
        std::vector<double> x;
        std::vector<int> y;
        for (std::size_t i = 0; i < m; ++i) {
            const int label = static_cast<int>(i % 2);
            const double cx = label == 0 ? -1.0 : 1.0;
            x.push_back(cx + 0.3 * rng.normal());
            x.push_back(0.3 * rng.normal());
            y.push_back(label);
        }
        Tensor t = Tensor::matrix(m, 2, std::move(x));
        return labeled ? ClientDataset(id, std::move(t), std::move(y)) : ClientDataset(id, std::move(t));
    };
    int id = 0;
    for (std::size_t i = 0; i < n_labeled; ++i) fed.clients.push_back(make(id++, true));
    for (std::size_t i = 0; i < n_unlabeled; ++i) fed.clients.push_back(make(id++, false));
    for (std::size_t i = 0; i < n_eval; ++i) fed.eval_clients.push_back(make(id++, false));
    return fed;
}

}  // namespace testing
