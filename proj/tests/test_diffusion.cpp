#include <doctest.h>

#include <cmath>

#include "palm/model/diffusion.hpp"
#include "palm/train/optimizer.hpp"

#include "fd.hpp"

using namespace palm;
using namespace palm::model;
using test::DGraph;
using test::DValue;
namespace ad = palm::ad;

namespace {

DiffusionConfig tiny_cfg() {
    DiffusionConfig cfg;
    cfg.train_steps = 100;
    cfg.sample_steps = 10;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.d_model = 16;
    cfg.chunk_len = 3;
    cfg.channels = 8;
    return cfg;
}

constexpr int kCondWidth = 8; // pretend backbone width

struct TinyDit {
    ParamStore<double> store;
    NoisePredictor<double> dit;
    Tensor<double> action, affordance;

    explicit TinyDit(std::uint64_t seed, DiffusionConfig cfg = tiny_cfg())
        : store(seed), dit(store, "dit", cfg, kCondWidth), action({1, kCondWidth}),
          affordance({1, 4 * kCondWidth}) {
        Rng rng(seed + 99);
        for (auto& v : action) v = rng.normal();
        for (auto& v : affordance) v = rng.normal();
    }

    Tensor<double> eps(const Tensor<double>& x, int t) {
        DGraph g;
        ParamUse<double> p(g, store, false);
        return dit.forward(p, x, g.input(action), g.input(affordance), t).val().clone();
    }
};

} // namespace

TEST_CASE("cosine schedule: anchor, strict monotonicity, terminal value, closed form") {
    const int T = 100;
    CHECK(cosine_alpha_bar(0, T) == 1.0);
    double prev = cosine_alpha_bar(0, T);
    for (int t = 1; t <= T; ++t) {
        const double a = cosine_alpha_bar(t, T);
        CHECK(a < prev);
        prev = a;
    }
    CHECK(cosine_alpha_bar(T, T) < 0.01);
    CHECK(cosine_alpha_bar(T, T) > 0.0);

    // Direct evaluation of the squared-cosine form at an interior point.
    const double s = 0.008;
    const double u = 40.0 / T;
    const double expected = std::pow(std::cos(M_PI / 2 * (u + s) / (1 + s)), 2) /
                            std::pow(std::cos(M_PI / 2 * s / (1 + s)), 2);
    CHECK(cosine_alpha_bar(40, T) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(cosine_alpha_bar(-1, T), std::out_of_range);
    CHECK_THROWS_AS(cosine_alpha_bar(T + 1, T), std::out_of_range);
}

TEST_CASE("noise_target: endpoint identities, affine superposition, variance preservation") {
    Rng rng(3);
    auto y = test::random_tensor({3, 8}, rng);
    auto eps = test::random_tensor({3, 8}, rng);

    auto same = noise_target(y, eps, 1.0);
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(same[i] == y[i]);
    auto pure = noise_target(y, eps, 0.0);
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(pure[i] == eps[i]);

    // Affinity: NT(y1 + y2, e1 + e2) == NT(y1, e1) + NT(y2, e2).
    auto y2 = test::random_tensor({3, 8}, rng);
    auto e2 = test::random_tensor({3, 8}, rng);
    Tensor<double> ysum({3, 8}), esum({3, 8});
    for (std::int64_t i = 0; i < ysum.size(); ++i) {
        ysum[i] = y[i] + y2[i];
        esum[i] = eps[i] + e2[i];
    }
    const double abar = 0.37;
    auto lhs = noise_target(ysum, esum, abar);
    auto r1 = noise_target(y, eps, abar);
    auto r2 = noise_target(y2, e2, abar);
    for (std::int64_t i = 0; i < lhs.size(); ++i)
        CHECK(std::abs(lhs[i] - (r1[i] + r2[i])) <= 1e-12);

    Tensor<double> wrong({2, 8});
    CHECK_THROWS_AS(noise_target(y, wrong, 0.5), std::invalid_argument);

    // Unit-variance input stays unit variance under the forward noising.
    Rng mc(17);
    for (double a : {0.9, 0.5, 0.1}) {
        double sq = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            const double yi = mc.normal();
            const double ei = mc.normal();
            const double noised = std::sqrt(a) * yi + std::sqrt(1 - a) * ei;
            sq += noised * noised;
        }
        CHECK(std::abs(sq / n - 1.0) <= 0.02);
    }
}

TEST_CASE("ddim time grid is even and spans T..0") {
    auto times = ddim_time_grid(100, 10);
    REQUIRE(times.size() == 11);
    CHECK(times.front() == 100);
    CHECK(times.back() == 0);
    for (std::size_t i = 0; i + 1 < times.size(); ++i) CHECK(times[i] - times[i + 1] == 10);
}

TEST_CASE("denoiser: shape contract, determinism, conditioning path") {
    TinyDit m(21);
    Rng rng(5);
    auto x = test::random_tensor({3, 8}, rng);

    auto out1 = m.eps(x, 50);
    CHECK(out1.rows() == 3);
    CHECK(out1.cols() == 8);
    auto out2 = m.eps(x, 50);
    for (std::int64_t i = 0; i < out1.size(); ++i) CHECK(out1[i] == out2[i]);

    // Generic (non-zero-init) weights: perturbing the affordance latent
    // changes the prediction.
    Rng rw(77);
    test::randomize_params(m.store, rw, 0.08);
    auto base = m.eps(x, 50);
    m.affordance[3] += 0.5;
    auto shifted = m.eps(x, 50);
    double diff = 0;
    for (std::int64_t i = 0; i < base.size(); ++i) diff += std::abs(base[i] - shifted[i]);
    CHECK(diff > 0.0);

    Tensor<double> nan_x({3, 8});
    nan_x[0] = std::numeric_limits<double>::quiet_NaN();
    DGraph g;
    ParamUse<double> p(g, m.store, false);
    CHECK_THROWS_AS(m.dit.forward(p, nan_x, g.input(m.action), g.input(m.affordance), 10),
                    std::invalid_argument);
}

TEST_CASE("diffusion loss: oracle zero, unit level for zero predictor, FD gradients") {
    Rng rng(7);
    // eps_hat == eps -> 0.
    {
        DGraph g;
        auto eps = test::random_tensor({3, 8}, rng);
        auto loss = ad::mean_sq_diff(g.input(eps, true), eps);
        CHECK(loss.item() == doctest::Approx(0.0));
    }
    // eps_hat == 0 -> dim-normalized |eps|^2 ~ 1 (Monte Carlo, 5%).
    {
        Rng mc(19);
        double acc = 0;
        const int trials = 2000;
        for (int i = 0; i < trials; ++i) {
            double s = 0;
            for (int k = 0; k < 24; ++k) {
                const double e = mc.normal();
                s += e * e;
            }
            acc += s / 24;
        }
        CHECK(std::abs(acc / trials - 1.0) <= 0.05);
    }
    // FD through the denoiser parameters (>= 50 probes).
    {
        TinyDit m(33);
        Rng rw(3);
        test::randomize_params(m.store, rw, 0.08);
        auto noised = test::random_tensor({3, 8}, rng);
        auto eps = test::random_tensor({3, 8}, rng);
        Rng probe(11);
        auto rep = test::param_fd_check(
            m.store,
            [&](DGraph& g, ParamUse<double>& p) {
                auto pred = m.dit.forward(p, noised, g.input(m.action), g.input(m.affordance), 37);
                return ad::mean_sq_diff(pred, eps);
            },
            60, probe);
        CHECK_MESSAGE(rep.max_rel_err <= 1e-4, rep.where, " rel=", rep.max_rel_err);
    }
}

TEST_CASE("singleton-dataset training: the 10-step sampler recovers the constant chunk") {
    DiffusionConfig cfg = tiny_cfg();
    TinyDit m(55, cfg);

    // The constant target chunk the denoiser has to memorize.
    Tensor<double> target({cfg.chunk_len, cfg.channels});
    Rng tr(2);
    for (auto& v : target) v = tr.uniform(-0.8, 0.8);

    train::AdamW<double> opt(m.store, 0.9, 0.999, 1e-8, 0.0);
    Rng rng(9);
    const int steps = 4000, batch = 8;
    for (int step = 0; step < steps; ++step) {
        m.store.zero_grad();
        for (int b = 0; b < batch; ++b) {
            DGraph g;
            ParamUse<double> p(g, m.store);
            const int t_d = 1 + static_cast<int>(rng.uniform_int(cfg.train_steps));
            Tensor<double> eps({cfg.chunk_len, cfg.channels});
            for (auto& v : eps) v = rng.normal();
            const Tensor<double> noised =
                noise_target(target, eps, cosine_alpha_bar(t_d, cfg.train_steps));
            auto loss = ad::mean_sq_diff(
                m.dit.forward(p, noised, g.input(m.action), g.input(m.affordance), t_d), eps);
            g.backward(loss);
            p.harvest(1.0 / batch);
        }
        opt.step(train::cosine_lr(3e-3, step, steps));
    }

    auto eps_fn = [&](const Tensor<double>& x, int t) { return m.eps(x, t); };
    Rng noise1(123);
    auto chunk10 = ddim_sample<double>(eps_fn, cfg.chunk_len, cfg.channels, cfg, 10, noise1);
    double max_err = 0;
    for (std::int64_t i = 0; i < chunk10.size(); ++i)
        max_err = std::max(max_err, std::abs(chunk10[i] - target[i]));
    CHECK(max_err <= 0.05);

    // Deterministic sampler: fixed noise seed -> identical chunk.
    Rng noise1b(123);
    auto again = ddim_sample<double>(eps_fn, cfg.chunk_len, cfg.channels, cfg, 10, noise1b);
    for (std::int64_t i = 0; i < chunk10.size(); ++i) CHECK(again[i] == chunk10[i]);

    // Sampler consistency: 10 vs 100 steps agree within 0.05.
    Rng noise2(123);
    auto chunk100 = ddim_sample<double>(eps_fn, cfg.chunk_len, cfg.channels, cfg, 100, noise2);
    double drift = 0;
    for (std::int64_t i = 0; i < chunk10.size(); ++i)
        drift = std::max(drift, std::abs(chunk100[i] - chunk10[i]));
    CHECK(drift <= 0.05);
}
