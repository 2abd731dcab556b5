#include <doctest.h>

#include "palm/core/params.hpp"

#include "fd.hpp"

using namespace palm;
using namespace palm::test;
namespace ad = palm::ad;

namespace {
constexpr double kTol = 1e-6; // double precision, central differences
} // namespace

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(42);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng, 0.2, 1.5); // keep div well-conditioned

    auto rep = fd_check(
        [](DGraph&, std::vector<DValue>& in) {
            auto x = ad::mul(ad::add(in[0], in[1]), ad::sub(in[0], in[1]));
            return ad::sum(ad::div(x, in[1]));
        },
        {a, b});
    CHECK_MESSAGE(rep.ok(kTol), rep.where, " rel=", rep.max_rel_err);
}

TEST_CASE("matmul/transpose/linear match finite differences") {
    Rng rng(7);
    auto x = random_tensor({2, 3}, rng);
    auto w = random_tensor({3, 4}, rng);
    auto b = random_tensor({4}, rng);

    auto rep = fd_check(
        [](DGraph&, std::vector<DValue>& in) {
            auto y = ad::linear(in[0], in[1], in[2]);
            return ad::mean(ad::square(ad::transpose(y)));
        },
        {x, w, b});
    CHECK_MESSAGE(rep.ok(kTol), rep.where, " rel=", rep.max_rel_err);
}

TEST_CASE("slicing and concatenation match finite differences") {
    Rng rng(3);
    auto x = random_tensor({4, 6}, rng);
    auto y = random_tensor({2, 6}, rng);

    auto rep = fd_check(
        [](DGraph&, std::vector<DValue>& in) {
            auto top = ad::slice_rows(in[0], 0, 2);
            auto cat = ad::concat_rows<double>({top, in[1]});
            auto left = ad::slice_cols(cat, 0, 3);
            auto right = ad::slice_cols(cat, 3, 3);
            auto wide = ad::concat_cols<double>({right, left});
            return ad::sum(ad::mul(wide, wide));
        },
        {x, y});
    CHECK_MESSAGE(rep.ok(kTol), rep.where, " rel=", rep.max_rel_err);
}

TEST_CASE("broadcast ops match finite differences") {
    Rng rng(11);
    auto x = random_tensor({5, 3}, rng);
    auto b = random_tensor({3}, rng);

    auto rep = fd_check(
        [](DGraph&, std::vector<DValue>& in) {
            auto y = ad::mul_row_broadcast(ad::add_row_broadcast(in[0], in[1]), in[1]);
            return ad::mean(y);
        },
        {x, b});
    CHECK_MESSAGE(rep.ok(kTol), rep.where, " rel=", rep.max_rel_err);
}

TEST_CASE("nonlinearities match finite differences") {
    Rng rng(13);
    auto x = random_tensor({4, 4}, rng, -2.0, 2.0);

    for (int which = 0; which < 8; ++which) {
        auto rep = fd_check(
            [which](DGraph&, std::vector<DValue>& in) {
                DValue y;
                switch (which) {
                case 0: y = ad::sigmoid(in[0]); break;
                case 1: y = ad::tanh_op(in[0]); break;
                case 2: y = ad::exp_op(in[0]); break;
                case 3: y = ad::softplus(in[0]); break;
                case 4: y = ad::gelu(in[0]); break;
                case 5: y = ad::square(in[0]); break;
                case 6: y = ad::pow_const(ad::sigmoid(in[0]), 2.0); break;
                default: y = ad::log_op(ad::add_scalar(ad::square(in[0]), 1.0)); break;
                }
                return ad::sum(y);
            },
            {x});
        CHECK_MESSAGE(rep.ok(kTol), "op ", which, " ", rep.where, " rel=", rep.max_rel_err);
    }
}

TEST_CASE("masked softmax matches finite differences and zeroes masked entries") {
    Rng rng(17);
    auto x = random_tensor({3, 5}, rng, -2.0, 2.0);
    Tensor<std::uint8_t> mask({3, 5});
    for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.7 ? 1 : 0;
    for (int i = 0; i < 3; ++i) mask.at(i, i) = 1; // keep each row non-empty

    {
        DGraph g;
        auto in = g.input(x.clone(), true);
        auto y = ad::masked_softmax_rows(in, mask);
        for (int i = 0; i < 3; ++i) {
            double row_sum = 0;
            for (int j = 0; j < 5; ++j) {
                if (!mask.at(i, j)) CHECK(y.val().at(i, j) == 0.0);
                row_sum += y.val().at(i, j);
            }
            CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }

    auto w = random_tensor({3, 5}, rng);
    auto rep = fd_check(
        [&](DGraph&, std::vector<DValue>& in) {
            return ad::sum(ad::mul_const(ad::masked_softmax_rows(in[0], mask), w));
        },
        {x});
    CHECK_MESSAGE(rep.ok(kTol), rep.where, " rel=", rep.max_rel_err);
}

TEST_CASE("layer norm matches finite differences") {
    Rng rng(19);
    auto x = random_tensor({3, 6}, rng, -2.0, 2.0);
    auto gamma = random_tensor({6}, rng, 0.5, 1.5);
    auto beta = random_tensor({6}, rng);
    auto w = random_tensor({3, 6}, rng);

    auto rep = fd_check(
        [&](DGraph&, std::vector<DValue>& in) {
            return ad::sum(ad::mul_const(ad::layer_norm(in[0], in[1], in[2]), w));
        },
        {x, gamma, beta});
    CHECK_MESSAGE(rep.ok(kTol), rep.where, " rel=", rep.max_rel_err);
}

TEST_CASE("embedding, reductions and scalar division match finite differences") {
    Rng rng(23);
    auto table = random_tensor({7, 4}, rng);

    auto rep = fd_check(
        [](DGraph&, std::vector<DValue>& in) {
            auto rows = ad::embedding(in[0], {1, 3, 3, 6});
            auto pooled = ad::mean_rows(rows);
            auto denom = ad::add_scalar(ad::sum(ad::square(rows)), 0.5);
            return ad::sum(ad::div_by_scalar(pooled, denom));
        },
        {table});
    CHECK_MESSAGE(rep.ok(kTol), rep.where, " rel=", rep.max_rel_err);
}

TEST_CASE("stop_gradient blocks flow") {
    DGraph g;
    auto x = g.input(Tensor<double>({2}, {1.0, 2.0}), true);
    auto y = ad::mul(x, ad::stop_gradient(x));
    g.backward(ad::sum(y));
    // d/dx of x * const(x) = const(x), not 2x.
    CHECK(g.grad(x)[0] == doctest::Approx(1.0));
    CHECK(g.grad(x)[1] == doctest::Approx(2.0));
}

TEST_CASE("repeated use of a leaf accumulates gradient") {
    DGraph g;
    auto x = g.input(Tensor<double>({1}, {3.0}), true);
    auto y = ad::add(ad::square(x), ad::scale(x, 2.0)); // x^2 + 2x
    g.backward(y);
    CHECK(g.grad(x)[0] == doctest::Approx(2.0 * 3.0 + 2.0));
}

TEST_CASE("param store leafs once and harvests scaled gradients") {
    ParamStore<double> store(1);
    const int w = store.add("w", {2, 2}, Init::Normal002);

    ad::Graph<double> g;
    ParamUse<double> use(g, store);
    auto a = use(w);
    auto b = use(w);
    CHECK(a.idx == b.idx);

    g.backward(ad::sum(ad::square(a)));
    use.harvest(0.5);
    for (int i = 0; i < 4; ++i)
        CHECK(store.grad(w)[i] ==
              doctest::Approx(0.5 * 2.0 * store.value(w)[i]).epsilon(1e-12));
}

TEST_CASE("graph determinism: same inputs, same outputs") {
    Rng rng(29);
    auto x = random_tensor({4, 4}, rng);
    auto run = [&]() {
        DGraph g;
        auto in = g.input(x, false);
        auto y = ad::gelu(ad::matmul(in, in));
        return ad::sum(y).item();
    };
    CHECK(run() == run());
}
