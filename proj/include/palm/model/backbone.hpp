#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "palm/model/encoders.hpp"

namespace palm::model {

struct BackboneConfig {
    int d_model = 192;
    int layers = 6;
    int heads = 6;
    int max_timesteps = 7;

    void validate() const {
        if (d_model % heads != 0)
            throw std::invalid_argument("backbone: width not divisible by heads");
        if (layers < 1) throw std::invalid_argument("backbone: needs at least one layer");
    }
};

/// Attention rules over (role, timestep) tags:
///   context -> context        causal over timesteps
///   context -> any query      forbidden
///   affordance -> context     allowed
///   affordance -> affordance  self only
///   affordance -> action      forbidden
///   action -> context         allowed
///   action -> affordance      allowed
///   action -> action          self only
inline bool may_attend(TokenRole q_role, int q_ts, int q_idx, TokenRole k_role, int k_ts,
                       int k_idx) {
    if (q_role == TokenRole::Context)
        return k_role == TokenRole::Context && k_ts <= q_ts;
    if (q_role == TokenRole::AffordanceQuery) {
        if (k_role == TokenRole::Context) return true;
        if (k_role == TokenRole::AffordanceQuery) return q_idx == k_idx;
        return false;
    }
    // Action query.
    if (k_role == TokenRole::ActionQuery) return q_idx == k_idx;
    return true;
}

inline Tensor<std::uint8_t> build_structured_mask(const std::vector<TokenRole>& roles,
                                                  const std::vector<int>& timesteps) {
    if (roles.size() != timesteps.size() || roles.empty())
        throw std::invalid_argument("structured mask: untagged-token (role/timestep mismatch)");
    const int L = static_cast<int>(roles.size());
    Tensor<std::uint8_t> m({L, L});
    for (int q = 0; q < L; ++q)
        for (int k = 0; k < L; ++k)
            m.at(q, k) = may_attend(roles[static_cast<std::size_t>(q)],
                                    timesteps[static_cast<std::size_t>(q)], q,
                                    roles[static_cast<std::size_t>(k)],
                                    timesteps[static_cast<std::size_t>(k)], k)
                             ? 1
                             : 0;
    return m;
}

/// The four affordance read-outs plus the action-progress read-out.
template <class S>
struct BackboneOutput {
    ad::Value<S> global, local, spatial, dynamic; // each [1, d_model]
    ad::Value<S> action;                          // [1, d_model]
    ad::Value<S> tokens;                          // full final-layer sequence [L, d_model]

    ad::Value<S> affordance_concat() const {
        return ad::concat_cols<S>({global, local, spatial, dynamic});
    }
};

/// GPT-style pre-norm transformer evaluated under the structured mask; the
/// learnable query set lives here.
template <class S>
class Backbone {
public:
    Backbone(ParamStore<S>& ps, const std::string& prefix, const BackboneConfig& cfg)
        : cfg_(cfg) {
        cfg.validate();
        queries_ = ps.add(prefix + "/queries", {5, cfg.d_model}, Init::Normal002);
        time_emb_ = ps.add(prefix + "/time_emb", {cfg.max_timesteps, cfg.d_model},
                           Init::Normal002);
        for (int l = 0; l < cfg.layers; ++l)
            layers_.emplace_back(ps, prefix + "/layer" + std::to_string(l), cfg.d_model,
                                 cfg.heads, 4 * cfg.d_model);
        ln_g_ = ps.add(prefix + "/ln_g", {cfg.d_model}, Init::Ones);
        ln_b_ = ps.add(prefix + "/ln_b", {cfg.d_model}, Init::Zeros);
    }

    ad::Value<S> query_tokens(ParamUse<S>& p) const { return p(queries_); }

    BackboneOutput<S> forward(ParamUse<S>& p, const ContextSequence<S>& ctx) const {
        namespace ad = palm::ad;
        const Tensor<std::uint8_t> mask = build_structured_mask(ctx.roles, ctx.timesteps);

        std::vector<int> ts = ctx.timesteps;
        for (auto& t : ts) t = std::min(t, cfg_.max_timesteps - 1);
        auto x = ad::add(ctx.tokens, ad::embedding(p(time_emb_), ts));
        for (const auto& layer : layers_) x = layer.forward(p, x, &mask);
        x = ad::layer_norm(x, p(ln_g_), p(ln_b_));

        for (const auto& v : x.val())
            if (!std::isfinite(static_cast<double>(v)))
                throw std::runtime_error("backbone: non-finite activations");

        const int q0 = ctx.query_offset;
        BackboneOutput<S> out;
        out.tokens = x;
        out.global = ad::row(x, q0 + 0);
        out.local = ad::row(x, q0 + 1);
        out.spatial = ad::row(x, q0 + 2);
        out.dynamic = ad::row(x, q0 + 3);
        out.action = ad::row(x, q0 + 4);
        return out;
    }

    const BackboneConfig& config() const { return cfg_; }

private:
    BackboneConfig cfg_;
    int queries_, time_emb_, ln_g_, ln_b_;
    std::vector<TransformerLayer<S>> layers_;
};

} // namespace palm::model
