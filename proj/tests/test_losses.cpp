#include <doctest.h>

#include <cmath>

#include "palm/model/losses.hpp"

#include "fd.hpp"

using namespace palm;
using namespace palm::model;
using test::DGraph;
using test::DValue;
namespace ad = palm::ad;

namespace {

Tensor<double> binary_tensor(std::vector<int> dims, Rng& rng, double p1 = 0.3) {
    Tensor<double> t(std::move(dims));
    for (auto& v : t) v = rng.uniform() < p1 ? 1.0 : 0.0;
    return t;
}

double scalar_of(std::function<DValue(DGraph&)> fn) {
    DGraph g;
    return fn(g).item();
}

} // namespace

TEST_CASE("focal loss: optimum, hand value, BCE reduction, binary guard") {
    // Perfect prediction -> loss ~ 0.
    {
        DGraph g;
        Tensor<double> target({4}, {1, 0, 1, 0});
        Tensor<double> logits({4}, {40, -40, 40, -40});
        auto loss = focal_loss(g.input(logits, true), target);
        CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-12));
    }
    // Single positive pixel at p = 0.5: 0.25 * 0.25 * ln 2.
    {
        DGraph g;
        Tensor<double> target({1}, {1.0});
        Tensor<double> logits({1}, {0.0});
        auto loss = focal_loss(g.input(logits, true), target, 2.0, 0.25);
        const double expected = 0.25 * 0.25 * std::log(2.0);
        CHECK(std::abs(loss.item() - expected) <= 1e-9);
    }
    // gamma = 0, alpha = 0.5 -> 0.5 * binary cross-entropy.
    {
        Rng rng(3);
        auto target = binary_tensor({12}, rng);
        auto logits = test::random_tensor({12}, rng, -2, 2);
        DGraph g;
        auto loss = focal_loss(g.input(logits, true), target, 0.0, 0.5);
        double bce = 0;
        for (int i = 0; i < 12; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-logits[i]));
            bce += target[i] > 0 ? -std::log(p) : -std::log(1 - p);
        }
        bce /= 12;
        CHECK(loss.item() == doctest::Approx(0.5 * bce).epsilon(1e-9));
    }
    {
        DGraph g;
        Tensor<double> target({2}, {0.5, 1.0});
        Tensor<double> logits({2});
        CHECK_THROWS_AS(focal_loss(g.input(logits, true), target), std::invalid_argument);
    }
}

TEST_CASE("dice loss: identity, disjoint, hand value") {
    DGraph g;
    Tensor<double> y({4}, {1, 1, 0, 0});
    Tensor<double> match({4}, {40, 40, -40, -40});
    CHECK(dice_loss(g.input(match, true), y).item() == doctest::Approx(0.0).epsilon(1e-6));

    Tensor<double> disjoint({4}, {-40, -40, 40, 40});
    CHECK(dice_loss(g.input(disjoint, true), y).item() == doctest::Approx(1.0).epsilon(1e-6));

    // |p n y| = 1, |p| = |y| = 2 -> 1 - 2/4 (with the documented smoothing).
    Tensor<double> half({3}, {40, -40, 40}); // predicts {0,2}; target {0,1}
    Tensor<double> y2({3}, {1, 1, 0});
    const double expected = 1.0 - 2.0 * 1.0 / (2.0 + 2.0 + 1e-6);
    CHECK(dice_loss(g.input(half, true), y2).item() ==
          doctest::Approx(expected).epsilon(1e-9));
    CHECK(dice_loss(g.input(half, true), y2).item() == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("kl heatmap loss: identity zero, hand value, nonnegativity") {
    const double eps = 1e-8;
    {
        // Prediction proportional to the target after sigmoid -> KL = 0.
        DGraph g;
        Tensor<double> logits({3}, {0.3, -0.7, 1.1});
        Tensor<double> target({3});
        for (int i = 0; i < 3; ++i) target[i] = 1.0 / (1.0 + std::exp(-logits[i]));
        auto loss = kl_heatmap_loss(g.input(logits, true), target, eps);
        CHECK(std::abs(loss.item()) <= 1e-12);
    }
    {
        // target [1, 0], prediction uniform -> ln 2 (exactly, including eps).
        DGraph g;
        Tensor<double> logits({2}, {0.0, 0.0});
        Tensor<double> target({2}, {1.0, 0.0});
        auto loss = kl_heatmap_loss(g.input(logits, true), target, eps);
        const double t_norm = 1.0 / (1.0 + eps);
        const double p_norm = 0.5 / (1.0 + eps);
        const double expected = t_norm * std::log(t_norm / p_norm);
        CHECK(std::abs(loss.item() - expected) <= 1e-12);
        CHECK(loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-7));
    }
    {
        Rng rng(5);
        for (int trial = 0; trial < 1000; ++trial) {
            DGraph g;
            auto logits = test::random_tensor({6}, rng, -3, 3);
            Tensor<double> target({6});
            for (auto& v : target) v = rng.uniform();
            auto loss = kl_heatmap_loss(g.input(logits, true), target, eps);
            CHECK(loss.item() >= -1e-12);
        }
    }
    {
        DGraph g;
        Tensor<double> bad({2}, {1.0, -1.0});
        CHECK_THROWS_AS(kl_heatmap_loss(g.input(Tensor<double>({2}), true), bad, eps),
                        std::invalid_argument);
    }
}

TEST_CASE("chamfer loss: exact cover, hand value, empty cases, permutation invariance") {
    {
        DGraph g;
        Tensor<double> pred({2, 2}, {0.2, 0.3, 0.8, 0.9});
        Tensor<double> tgt({2, 2}, {0.8, 0.9, 0.2, 0.3});
        CHECK(chamfer_set_loss(g.input(pred, true), tgt).item() == doctest::Approx(0.0));
    }
    {
        DGraph g;
        Tensor<double> pred({2, 2}, {0.0, 0.1, 0.8, 1.0});
        Tensor<double> tgt({2, 2}, {0.0, 0.0, 1.0, 1.0});
        CHECK(chamfer_set_loss(g.input(pred, true), tgt).item() ==
              doctest::Approx(0.025).epsilon(1e-12));
    }
    {
        DGraph g;
        Tensor<double> pred({3, 2});
        Tensor<double> empty({0, 2});
        CHECK(chamfer_set_loss(g.input(pred, true), empty).item() == 0.0);
        Tensor<double> no_pred({0, 2});
        Tensor<double> tgt({1, 2});
        CHECK_THROWS_AS(chamfer_set_loss(g.input(no_pred, true), tgt), std::invalid_argument);
    }
    // Permutation invariance of both sets.
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int m = 1 + rng.uniform_index(8), c = 1 + rng.uniform_index(8);
        auto pred = test::random_tensor({m, 2}, rng, 0, 1);
        auto tgt = test::random_tensor({c, 2}, rng, 0, 1);

        Tensor<double> pred_rev({m, 2});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < 2; ++j) pred_rev.at(i, j) = pred.at(m - 1 - i, j);
        Tensor<double> tgt_rev({c, 2});
        for (int i = 0; i < c; ++i)
            for (int j = 0; j < 2; ++j) tgt_rev.at(i, j) = tgt.at(c - 1 - i, j);

        DGraph g;
        const double a = chamfer_set_loss(g.input(pred, true), tgt).item();
        const double b = chamfer_set_loss(g.input(pred_rev, true), tgt_rev).item();
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
}

TEST_CASE("chamfer matches exhaustive brute force on 500 random instances") {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const int m = 1 + rng.uniform_index(8), c = 1 + rng.uniform_index(8);
        auto pred = test::random_tensor({m, 2}, rng, -1, 2);
        auto tgt = test::random_tensor({c, 2}, rng, -1, 2);

        // Independent oracle: full distance matrix, then a column-wise min.
        std::vector<std::vector<double>> dist(static_cast<std::size_t>(c),
                                              std::vector<double>(static_cast<std::size_t>(m)));
        for (int ci = 0; ci < c; ++ci)
            for (int mi = 0; mi < m; ++mi) {
                const double dx = pred.at(mi, 0) - tgt.at(ci, 0);
                const double dy = pred.at(mi, 1) - tgt.at(ci, 1);
                dist[static_cast<std::size_t>(ci)][static_cast<std::size_t>(mi)] =
                    dx * dx + dy * dy;
            }
        double oracle = 0;
        for (int ci = 0; ci < c; ++ci) {
            double best = dist[static_cast<std::size_t>(ci)][0];
            for (int mi = 1; mi < m; ++mi)
                best = std::min(best, dist[static_cast<std::size_t>(ci)][static_cast<std::size_t>(mi)]);
            oracle += best;
        }
        oracle /= c;

        DGraph g;
        const double got = chamfer_set_loss(g.input(pred, true), tgt).item();
        CHECK(std::abs(got - oracle) <= 1e-12);
    }
}

TEST_CASE("masked VAE loss: prior KL zero, closed-form KL, perfect reconstruction") {
    {
        DGraph g;
        Tensor<double> mu({1, 4});
        Tensor<double> logvar({1, 4});
        auto kl = gaussian_prior_kl(g.input(mu, true), g.input(logvar, true));
        CHECK(kl.item() == doctest::Approx(0.0));
    }
    {
        DGraph g;
        Tensor<double> mu({1, 1}, {1.0});
        Tensor<double> logvar({1, 1}, {0.0});
        auto kl = gaussian_prior_kl(g.input(mu, true), g.input(logvar, true));
        CHECK(kl.item() == doctest::Approx(0.5).epsilon(1e-12));
    }
    {
        DGraph g;
        Tensor<double> mu({1, 2});
        Tensor<double> logvar({1, 2});
        Tensor<double> x({6}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
        Tensor<double> mask({6}, {1, 1, 1, 0, 0, 0});
        auto loss = masked_vae_loss(g.input(mu, true), g.input(logvar, true),
                                    g.input(x.clone(), true), x, mask, 1.0);
        CHECK(loss.item() == doctest::Approx(0.0));

        // Empty mask kills the reconstruction term entirely.
        Tensor<double> recon_off({6}, {9, 9, 9, 9, 9, 9});
        Tensor<double> no_mask({6});
        auto loss2 = masked_vae_loss(g.input(mu, true), g.input(logvar, true),
                                     g.input(recon_off, true), x, no_mask, 1.0);
        CHECK(loss2.item() == doctest::Approx(0.0));
    }
    {
        DGraph g;
        Tensor<double> nan_mu({1, 1}, {std::numeric_limits<double>::quiet_NaN()});
        Tensor<double> logvar({1, 1});
        CHECK_THROWS_AS(masked_vae_loss(g.input(nan_mu, true), g.input(logvar, true),
                                        g.input(Tensor<double>({3}), true), Tensor<double>({3}),
                                        Tensor<double>({3}), 1.0),
                        std::invalid_argument);
    }
}

TEST_CASE("every loss is nonnegative and gradients match finite differences") {
    Rng rng(13);
    const double tol = 1e-4;

    for (int trial = 0; trial < 8; ++trial) {
        auto target = binary_tensor({8, 8}, rng);
        auto logits = test::random_tensor({8, 8}, rng, -2, 2);

        auto focal_rep = test::fd_check(
            [&](DGraph&, std::vector<DValue>& in) { return focal_loss(in[0], target); },
            {logits});
        CHECK_MESSAGE(focal_rep.max_rel_err <= tol, "focal ", focal_rep.where, " ",
                      focal_rep.max_rel_err);

        auto dice_rep = test::fd_check(
            [&](DGraph&, std::vector<DValue>& in) { return dice_loss(in[0], target); }, {logits});
        CHECK_MESSAGE(dice_rep.max_rel_err <= tol, "dice ", dice_rep.where, " ",
                      dice_rep.max_rel_err);

        Tensor<double> heat({8, 8});
        for (auto& v : heat) v = rng.uniform();
        auto kl_rep = test::fd_check(
            [&](DGraph&, std::vector<DValue>& in) {
                return kl_heatmap_loss(in[0], heat, 1e-8);
            },
            {logits});
        CHECK_MESSAGE(kl_rep.max_rel_err <= tol, "kl ", kl_rep.where, " ", kl_rep.max_rel_err);

        CHECK(scalar_of([&](DGraph& g) { return focal_loss(g.input(logits, true), target); }) >=
              0.0);
        CHECK(scalar_of([&](DGraph& g) { return dice_loss(g.input(logits, true), target); }) >=
              -1e-12);
    }

    for (int trial = 0; trial < 8; ++trial) {
        const int m = 2 + rng.uniform_index(6), c = 1 + rng.uniform_index(6);
        auto pred = test::random_tensor({m, 2}, rng, 0, 1);
        auto tgt = test::random_tensor({c, 2}, rng, 0, 1);
        auto ch_rep = test::fd_check(
            [&](DGraph&, std::vector<DValue>& in) { return chamfer_set_loss(in[0], tgt); },
            {pred});
        CHECK_MESSAGE(ch_rep.max_rel_err <= tol, "chamfer ", ch_rep.where, " ",
                      ch_rep.max_rel_err);
    }

    for (int trial = 0; trial < 8; ++trial) {
        auto mu = test::random_tensor({1, 4}, rng);
        auto logvar = test::random_tensor({1, 4}, rng);
        auto recon = test::random_tensor({12}, rng);
        auto x = test::random_tensor({12}, rng);
        auto mask = binary_tensor({12}, rng, 0.5);
        auto vae_rep = test::fd_check(
            [&](DGraph&, std::vector<DValue>& in) {
                return masked_vae_loss(in[0], in[1], in[2], x, mask, 0.7);
            },
            {mu, logvar, recon});
        CHECK_MESSAGE(vae_rep.max_rel_err <= tol, "vae ", vae_rep.where, " ",
                      vae_rep.max_rel_err);
        CHECK(scalar_of([&](DGraph& g) {
                  return masked_vae_loss(g.input(mu, true), g.input(logvar, true),
                                         g.input(recon, true), x, mask, 0.7);
              }) >= -1e-12);
    }
}

TEST_CASE("affordance total loss: weighting, linearity, breakdown bookkeeping") {
    Rng rng(17);
    const int hw = 16;

    const auto global_logits = test::random_tensor({hw}, rng, -2, 2);
    const auto object_feature = test::random_tensor({1, 6}, rng);
    const auto local_logits = test::random_tensor({hw}, rng, -2, 2);
    const auto spatial_points = test::random_tensor({4, 2}, rng, 0, 1);
    const auto vae_mu = test::random_tensor({1, 3}, rng);
    const auto vae_logvar = test::random_tensor({1, 3}, rng);
    const auto vae_recon = test::random_tensor({hw * 3}, rng);
    auto build_inputs = [&](DGraph& g) {
        AffordanceLossInputs<double> in;
        in.global_logits = g.input(global_logits, true);
        in.object_feature = g.input(object_feature, true);
        in.local_logits = g.input(local_logits, true);
        in.spatial_points = g.input(spatial_points, true);
        in.vae_mu = g.input(vae_mu, true);
        in.vae_logvar = g.input(vae_logvar, true);
        in.vae_recon = g.input(vae_recon, true);
        return in;
    };
    AffordanceLossTargets<double> tg;
    tg.global_mask = binary_tensor({hw}, rng);
    tg.feature = test::random_tensor({1, 6}, rng);
    Tensor<double> heat({hw});
    for (auto& v : heat) v = rng.uniform();
    tg.local_heatmap = heat;
    tg.spatial_points = test::random_tensor({3, 2}, rng, 0, 1);
    tg.future_pixels = test::random_tensor({hw * 3}, rng, 0, 1);
    tg.mask3 = binary_tensor({hw * 3}, rng, 0.4);

    LossWeights w;
    DGraph g;
    auto full = affordance_total_loss(build_inputs(g), tg, w);

    // Breakdown terms recombine to the total under the weights.
    const double recombined = w.global * full.terms["global"] + w.local * full.terms["local"] +
                              w.spatial * full.terms["spatial"] +
                              w.dynamic * full.terms["dynamic"] +
                              w.feature * full.terms["feature"];
    CHECK(std::abs(recombined - full.total.item()) <= 1e-10);

    // All-zero weights -> zero loss.
    LossWeights zero;
    zero.global = zero.local = zero.spatial = zero.dynamic = zero.feature = zero.diffusion = 0;
    DGraph g2;
    auto nothing = affordance_total_loss(build_inputs(g2), tg, zero);
    CHECK(nothing.total.item() == doctest::Approx(0.0));

    // Doubling one weight doubles exactly that contribution.
    LossWeights dbl = w;
    dbl.spatial = 2.0;
    DGraph g3;
    auto doubled = affordance_total_loss(build_inputs(g3), tg, dbl);
    CHECK(doubled.total.item() - full.total.item() ==
          doctest::Approx(full.terms["spatial"]).epsilon(1e-9));

    LossWeights bad;
    bad.spatial = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
