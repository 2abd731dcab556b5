#include <doctest.h>

#include "palm/model/backbone.hpp"

#include "fd.hpp"

using namespace palm;
using namespace palm::model;
using test::DGraph;
using test::DValue;
namespace ad = palm::ad;

namespace {

BackboneConfig tiny_cfg() {
    BackboneConfig cfg;
    cfg.d_model = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.max_timesteps = 7;
    return cfg;
}

/// Miniature layout: 2 context tokens at timesteps 0,1 plus the 4+1 queries.
struct MiniCtx {
    std::vector<TokenRole> roles;
    std::vector<int> timesteps;
};

MiniCtx mini_layout() {
    MiniCtx m;
    m.roles = {TokenRole::Context, TokenRole::Context, TokenRole::AffordanceQuery,
               TokenRole::AffordanceQuery, TokenRole::AffordanceQuery,
               TokenRole::AffordanceQuery, TokenRole::ActionQuery};
    m.timesteps = {0, 1, 1, 1, 1, 1, 1};
    return m;
}

ContextSequence<double> make_ctx(DGraph& g, ParamUse<double>& p, Backbone<double>& bb,
                                 const Tensor<double>& context_tokens, bool ctx_grad) {
    ContextSequence<double> ctx;
    auto ctx_in = g.input(context_tokens, ctx_grad);
    ctx.tokens = ad::concat_rows<double>({ctx_in, bb.query_tokens(p)});
    const int n_ctx = context_tokens.rows();
    for (int i = 0; i < n_ctx; ++i) {
        ctx.roles.push_back(TokenRole::Context);
        ctx.timesteps.push_back(i); // one token per timestep
    }
    ctx.query_offset = n_ctx;
    for (int i = 0; i < 4; ++i) {
        ctx.roles.push_back(TokenRole::AffordanceQuery);
        ctx.timesteps.push_back(n_ctx - 1);
    }
    ctx.roles.push_back(TokenRole::ActionQuery);
    ctx.timesteps.push_back(n_ctx - 1);
    return ctx;
}

} // namespace

TEST_CASE("structured mask equals the enumerated boolean matrix") {
    MiniCtx m = mini_layout();
    Tensor<std::uint8_t> mask = build_structured_mask(m.roles, m.timesteps);

    const std::uint8_t expected[7][7] = {
        {1, 0, 0, 0, 0, 0, 0}, // context@0: causal
        {1, 1, 0, 0, 0, 0, 0}, // context@1: causal, never sees queries
        {1, 1, 1, 0, 0, 0, 0}, // global query: context + self
        {1, 1, 0, 1, 0, 0, 0}, // local query
        {1, 1, 0, 0, 1, 0, 0}, // spatial query
        {1, 1, 0, 0, 0, 1, 0}, // dynamic query
        {1, 1, 1, 1, 1, 1, 1}, // action query: context + affordance + self
    };
    for (int q = 0; q < 7; ++q)
        for (int k = 0; k < 7; ++k) CHECK(mask.at(q, k) == expected[q][k]);

    // Named examples: affordance queries stay disentangled; the action query
    // reads the affordance foresight; context attention is causal.
    CHECK(mask.at(2, 3) == 0);
    CHECK(mask.at(6, 4) == 1);
    CHECK(mask.at(0, 1) == 0);
    CHECK(mask.at(1, 0) == 1);

    CHECK_THROWS_AS(build_structured_mask({TokenRole::Context}, {}), std::invalid_argument);
}

TEST_CASE("causal rule at arbitrary timesteps") {
    std::vector<TokenRole> roles(6, TokenRole::Context);
    std::vector<int> ts = {0, 1, 2, 3, 4, 5};
    auto mask = build_structured_mask(roles, ts);
    CHECK(mask.at(2, 5) == 0);
    CHECK(mask.at(5, 2) == 1);
}

TEST_CASE("disentanglement: query gradients are exactly isolated") {
    ParamStore<double> store(17);
    BackboneConfig cfg = tiny_cfg();
    Backbone<double> bb(store, "bb", cfg);

    Rng rng(23);
    auto ctx_tokens = test::random_tensor({4, cfg.d_model}, rng);

    auto run = [&](int which_out) {
        DGraph g;
        ParamUse<double> p(g, store);
        auto ctx = make_ctx(g, p, bb, ctx_tokens, false);
        auto out = bb.forward(p, ctx);
        DValue target;
        switch (which_out) {
        case 0: target = out.global; break;
        case 1: target = out.local; break;
        default: target = out.action; break;
        }
        g.backward(ad::sum(target));
        // Gradient w.r.t. the 5 query-init rows.
        const Tensor<double>& qgrad = g.grad(bb.query_tokens(p));
        std::vector<double> row_norms(5, 0.0);
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < cfg.d_model; ++c) row_norms[static_cast<std::size_t>(r)] += std::abs(qgrad.at(r, c));
        return row_norms;
    };

    // d(F.global)/d(other affordance query inits) == 0 exactly; its own != 0.
    auto g_norms = run(0);
    CHECK(g_norms[0] > 0.0);
    CHECK(g_norms[1] == 0.0);
    CHECK(g_norms[2] == 0.0);
    CHECK(g_norms[3] == 0.0);
    CHECK(g_norms[4] == 0.0); // affordance queries never see the action query

    auto l_norms = run(1);
    CHECK(l_norms[1] > 0.0);
    CHECK(l_norms[0] == 0.0);

    // The action latent reads every query init (generic weights).
    auto a_norms = run(2);
    for (int r = 0; r < 5; ++r) CHECK(a_norms[static_cast<std::size_t>(r)] > 0.0);
}

TEST_CASE("causality: context outputs never depend on later context inputs") {
    ParamStore<double> store(19);
    BackboneConfig cfg = tiny_cfg();
    Backbone<double> bb(store, "bb", cfg);

    Rng rng(29);
    auto ctx_tokens = test::random_tensor({5, cfg.d_model}, rng);

    DGraph g;
    ParamUse<double> p(g, store);
    auto ctx = make_ctx(g, p, bb, ctx_tokens, true);
    auto out = bb.forward(p, ctx);
    // Context output at timestep 1 (row 1).
    g.backward(ad::sum(ad::row(out.tokens, 1)));

    const int ctx_leaf = ctx.tokens.idx; // concat node; walk to the raw input instead
    (void)ctx_leaf;
    // Find the raw context input node: it is the parent the concat copied rows from.
    // make_ctx leafed it as g.input(..., true); locate by shape match.
    // Simpler: gradient of the concatenated token matrix rows.
    const Tensor<double>& tok_grad = g.grad(ctx.tokens);
    for (int c = 0; c < cfg.d_model; ++c) {
        CHECK(tok_grad.at(2, c) == 0.0); // timestep 2 input cannot affect timestep-1 output
        CHECK(tok_grad.at(3, c) == 0.0);
        CHECK(tok_grad.at(4, c) == 0.0);
    }
    double earlier = 0.0;
    for (int c = 0; c < cfg.d_model; ++c)
        earlier += std::abs(tok_grad.at(0, c)) + std::abs(tok_grad.at(1, c));
    CHECK(earlier > 0.0);
}

TEST_CASE("perturbing a later context token leaves earlier context outputs bit-identical") {
    ParamStore<double> store(31);
    BackboneConfig cfg = tiny_cfg();
    Backbone<double> bb(store, "bb", cfg);

    Rng rng(37);
    auto ctx_tokens = test::random_tensor({5, cfg.d_model}, rng);

    auto run = [&](const Tensor<double>& tokens) {
        DGraph g;
        ParamUse<double> p(g, store);
        auto ctx = make_ctx(g, p, bb, tokens, false);
        auto out = bb.forward(p, ctx);
        std::vector<double> head;
        for (int r = 0; r <= 1; ++r)
            for (int c = 0; c < cfg.d_model; ++c) head.push_back(out.tokens.val().at(r, c));
        return head;
    };

    auto before = run(ctx_tokens);
    Tensor<double> bumped = ctx_tokens.clone();
    bumped.at(4, 3) += 1.0;
    auto after = run(bumped);
    CHECK(before == after);

    // Determinism: identical inputs give identical outputs.
    CHECK(run(ctx_tokens) == run(ctx_tokens));
}

TEST_CASE("backbone gradients match finite differences on a width-16 instance") {
    ParamStore<double> store(41);
    BackboneConfig cfg = tiny_cfg();
    Backbone<double> bb(store, "bb", cfg);

    Rng rng(43);
    auto ctx_tokens = test::random_tensor({4, cfg.d_model}, rng);
    auto w = test::random_tensor({1, cfg.d_model}, rng);

    // FD over the context inputs.
    auto rep = test::fd_check(
        [&](DGraph& g, std::vector<DValue>& in) {
            ParamUse<double> p(g, store);
            ContextSequence<double> ctx;
            ctx.tokens = ad::concat_rows<double>({in[0], bb.query_tokens(p)});
            for (int i = 0; i < 4; ++i) {
                ctx.roles.push_back(TokenRole::Context);
                ctx.timesteps.push_back(i);
            }
            ctx.query_offset = 4;
            for (int i = 0; i < 4; ++i) {
                ctx.roles.push_back(TokenRole::AffordanceQuery);
                ctx.timesteps.push_back(3);
            }
            ctx.roles.push_back(TokenRole::ActionQuery);
            ctx.timesteps.push_back(3);
            auto out = bb.forward(p, ctx);
            return ad::sum(ad::mul_const(
                ad::add(out.action, ad::add(out.global, out.dynamic)), w));
        },
        {ctx_tokens});
    CHECK_MESSAGE(rep.max_rel_err <= 1e-4, rep.where, " rel=", rep.max_rel_err);

    // FD over randomly probed backbone parameters.
    Rng probe_rng(47);
    auto prep = test::param_fd_check(
        store,
        [&](DGraph& g, ParamUse<double>& p) {
            ContextSequence<double> ctx;
            ctx.tokens = ad::concat_rows<double>({g.input(ctx_tokens), bb.query_tokens(p)});
            for (int i = 0; i < 4; ++i) {
                ctx.roles.push_back(TokenRole::Context);
                ctx.timesteps.push_back(i);
            }
            ctx.query_offset = 4;
            for (int i = 0; i < 4; ++i) {
                ctx.roles.push_back(TokenRole::AffordanceQuery);
                ctx.timesteps.push_back(3);
            }
            ctx.roles.push_back(TokenRole::ActionQuery);
            ctx.timesteps.push_back(3);
            auto out = bb.forward(p, ctx);
            return ad::sum(ad::mul_const(ad::add(out.action, out.spatial), w));
        },
        60, probe_rng);
    CHECK_MESSAGE(prep.max_rel_err <= 1e-4, prep.where, " rel=", prep.max_rel_err);
}
