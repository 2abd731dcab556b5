#pragma once

#include <cmath>
#include <map>
#include <string>

#include "palm/core/ops.hpp"

namespace palm::model {

struct LossWeights {
    double global = 1.0;
    double local = 1.0;
    double spatial = 1.0;
    double dynamic = 1.0;
    double feature = 0.1;
    double diffusion = 1.0;
    double beta = 1.0; // KL weight inside the dynamic VAE term

    void validate() const {
        if (global < 0 || local < 0 || spatial < 0 || dynamic < 0 || feature < 0 ||
            diffusion < 0 || beta < 0)
            throw std::invalid_argument("loss weights must be nonnegative");
    }
};

namespace detail {
template <class S>
void check_binary(const Tensor<S>& target, const char* op) {
    for (const auto& v : target)
        if (v != S(0) && v != S(1))
            throw std::invalid_argument(std::string(op) + ": non-binary target");
}
} // namespace detail

/// Mean over the full domain of -alpha_t (1-p_t)^gamma log p_t, with p_t the
/// probability the logit assigns to the pixel's true class. Composed from
/// numerically stable pieces: log sigmoid(x) = -softplus(-x).
template <class S>
ad::Value<S> focal_loss(ad::Value<S> logits, const Tensor<S>& target, S gamma = S(2),
                        S alpha = S(0.25)) {
    namespace ad = palm::ad;
    detail::check_binary(target, "focal_loss");
    if (static_cast<std::int64_t>(target.size()) != logits.val().size())
        throw std::invalid_argument("focal_loss: shape mismatch");

    Tensor<S> pos = target.clone();
    Tensor<S> neg = target.clone();
    for (std::int64_t i = 0; i < neg.size(); ++i) neg[i] = S(1) - neg[i];

    auto nx = ad::neg(logits);
    // positive class: alpha * sigmoid(-x)^gamma * softplus(-x)
    auto pos_term = ad::scale(ad::mul(ad::pow_const(ad::sigmoid(nx), gamma), ad::softplus(nx)),
                              alpha);
    // negative class: (1-alpha) * sigmoid(x)^gamma * softplus(x)
    auto neg_term = ad::scale(
        ad::mul(ad::pow_const(ad::sigmoid(logits), gamma), ad::softplus(logits)), S(1) - alpha);
    auto combined = ad::add(ad::mul_const(pos_term, pos), ad::mul_const(neg_term, neg));
    return ad::mean(combined);
}

/// 1 - 2<p,y> / (sum p + sum y + eps), p = sigmoid(logits).
template <class S>
ad::Value<S> dice_loss(ad::Value<S> logits, const Tensor<S>& target, S eps = S(1e-6)) {
    namespace ad = palm::ad;
    detail::check_binary(target, "dice_loss");
    auto p = ad::sigmoid(logits);
    auto inter = ad::sum(ad::mul_const(p, target));
    S target_sum = 0;
    for (const auto& v : target) target_sum += v;
    auto denom = ad::add_scalar(ad::sum(p), target_sum + eps);
    return ad::add_scalar(ad::neg(ad::scale(ad::div(inter, denom), S(2))), S(1));
}

/// KL(normalized target || normalized sigmoid(prediction)); both sides go
/// through the l1 normalization with the same eps. Zero-mass target pixels
/// contribute exactly 0.
template <class S>
ad::Value<S> kl_heatmap_loss(ad::Value<S> pred_logits, const Tensor<S>& target_heatmap, S eps) {
    namespace ad = palm::ad;
    S target_sum = 0;
    for (const auto& v : target_heatmap) {
        if (v < S(0)) throw std::invalid_argument("kl_heatmap_loss: negative target entries");
        target_sum += v;
    }
    Tensor<S> t_norm = target_heatmap.clone();
    for (auto& v : t_norm) v /= (target_sum + eps);

    S entropy_part = 0; // sum t~ log t~ over supported pixels
    for (const auto& v : t_norm)
        if (v > S(0)) entropy_part += v * std::log(v);

    auto p = ad::sigmoid(pred_logits);
    auto p_norm = ad::div_by_scalar(p, ad::add_scalar(ad::sum(p), eps));
    auto cross = ad::sum(ad::mul_const(ad::log_op(p_norm), t_norm)); // sum t~ log p~
    return ad::add_scalar(ad::neg(cross), entropy_part);
}

/// (1/C) sum_c min_m ||pred_m - target_c||^2; 0 when the target set is empty.
/// Implemented as a fused op: the backward routes gradient through each
/// target's argmin candidate.
template <class S>
ad::Value<S> chamfer_set_loss(ad::Value<S> pred, const Tensor<S>& targets) {
    namespace ad = palm::ad;
    const Tensor<S>& pv = pred.val();
    if (pv.rows() < 1) throw std::invalid_argument("chamfer_set_loss: empty-prediction");
    if (pv.cols() != 2 || (targets.size() > 0 && targets.cols() != 2))
        throw std::invalid_argument("chamfer_set_loss: points must be 2-D");
    const int m_count = pv.rows();
    const int c_count = targets.size() == 0 ? 0 : targets.rows();
    if (c_count == 0) return pred.graph->input(Tensor<S>::scalar(S(0)));

    std::vector<int> best(static_cast<std::size_t>(c_count), 0);
    S total = 0;
    for (int c = 0; c < c_count; ++c) {
        S best_d = std::numeric_limits<S>::max();
        for (int m = 0; m < m_count; ++m) {
            const S dx = pv.at(m, 0) - targets.at(c, 0);
            const S dy = pv.at(m, 1) - targets.at(c, 1);
            const S d = dx * dx + dy * dy;
            if (d < best_d) {
                best_d = d;
                best[static_cast<std::size_t>(c)] = m;
            }
        }
        total += best_d;
    }
    const S inv_c = S(1) / static_cast<S>(c_count);
    return pred.graph->make(
        Tensor<S>::scalar(total * inv_c), {pred.idx},
        [pi = pred.idx, pv, targets, best, inv_c, c_count](palm::ad::Graph<S>& g,
                                                           typename palm::ad::Graph<S>::Node& n) {
            if (!g.node(pi).requires_grad) return;
            Tensor<S>& dp = g.grad_buffer(pi);
            const S go = n.grad[0] * inv_c;
            for (int c = 0; c < c_count; ++c) {
                const int m = best[static_cast<std::size_t>(c)];
                dp.at(m, 0) += go * S(2) * (pv.at(m, 0) - targets.at(c, 0));
                dp.at(m, 1) += go * S(2) * (pv.at(m, 1) - targets.at(c, 1));
            }
        });
}

/// Closed-form KL(N(mu, sigma^2) || N(0, I)) summed over latent dims.
template <class S>
ad::Value<S> gaussian_prior_kl(ad::Value<S> mu, ad::Value<S> logvar) {
    namespace ad = palm::ad;
    auto var = ad::exp_op(logvar);
    auto term = ad::sub(ad::add(ad::square(mu), var), ad::add_scalar(logvar, S(1)));
    return ad::scale(ad::sum(term), S(0.5));
}

/// E_q[-log P(x^M | z)] + beta KL(q || N(0,I)); the reconstruction likelihood
/// is a unit-variance Gaussian on the masked pixels (constant dropped), so
/// the first term is 0.5 * sum over mask support of squared error. The
/// expectation uses whatever single z produced `recon` upstream.
template <class S>
ad::Value<S> masked_vae_loss(ad::Value<S> mu, ad::Value<S> logvar, ad::Value<S> recon,
                             const Tensor<S>& future_pixels, const Tensor<S>& mask_per_element,
                             S beta) {
    namespace ad = palm::ad;
    for (const auto& v : mu.val())
        if (!std::isfinite(static_cast<double>(v)))
            throw std::invalid_argument("masked_vae_loss: non-finite posterior");
    for (const auto& v : logvar.val())
        if (!std::isfinite(static_cast<double>(v)))
            throw std::invalid_argument("masked_vae_loss: non-finite posterior");

    auto diff = ad::mul_const(ad::sub_const(recon, future_pixels), mask_per_element);
    auto rec = ad::scale(ad::sum(ad::square(diff)), S(0.5));
    return ad::add(rec, ad::scale(gaussian_prior_kl(mu, logvar), beta));
}

template <class S>
struct AffordanceLossBreakdown {
    ad::Value<S> total;
    std::map<std::string, double> terms; // unweighted per-term values
};

/// w_g (FL + Dice) + w_l (FL + KL) + w_s chamfer + w_d vae + w_f feature.
/// The focal term on the soft local heatmap thresholds the target at 0.5;
/// the KL term keeps the soft map.
template <class S>
struct AffordanceLossInputs {
    ad::Value<S> global_logits;   // [H*W]
    ad::Value<S> object_feature;  // [1, feat]
    ad::Value<S> local_logits;    // [H*W]
    ad::Value<S> spatial_points;  // [M, 2]
    ad::Value<S> vae_mu, vae_logvar, vae_recon; // recon: [H*W*3]
};

template <class S>
struct AffordanceLossTargets {
    Tensor<S> global_mask;     // binary [H*W]
    Tensor<S> feature;         // [1, feat]
    Tensor<S> local_heatmap;   // soft [H*W]
    Tensor<S> spatial_points;  // [C, 2]
    Tensor<S> future_pixels;   // [H*W*3]
    Tensor<S> mask3;           // dynamic mask replicated per channel [H*W*3]
    S norm_eps = S(1e-8);
};

template <class S>
AffordanceLossBreakdown<S> affordance_total_loss(const AffordanceLossInputs<S>& in,
                                                 const AffordanceLossTargets<S>& tg,
                                                 const LossWeights& w) {
    namespace ad = palm::ad;
    w.validate();

    auto g_term = ad::add(focal_loss(in.global_logits, tg.global_mask),
                          dice_loss(in.global_logits, tg.global_mask));

    Tensor<S> local_bin = tg.local_heatmap.clone();
    for (auto& v : local_bin) v = v >= S(0.5) ? S(1) : S(0);
    auto l_term = ad::add(focal_loss(in.local_logits, local_bin),
                          kl_heatmap_loss(in.local_logits, tg.local_heatmap, tg.norm_eps));

    auto s_term = chamfer_set_loss(in.spatial_points, tg.spatial_points);
    auto d_term = masked_vae_loss(in.vae_mu, in.vae_logvar, in.vae_recon, tg.future_pixels,
                                  tg.mask3, S(w.beta));
    auto f_term = ad::mean_sq_diff(in.object_feature, tg.feature);

    AffordanceLossBreakdown<S> out;
    out.terms["global"] = static_cast<double>(g_term.item());
    out.terms["local"] = static_cast<double>(l_term.item());
    out.terms["spatial"] = static_cast<double>(s_term.item());
    out.terms["dynamic"] = static_cast<double>(d_term.item());
    out.terms["feature"] = static_cast<double>(f_term.item());
    out.total = ad::add<S>({ad::scale(g_term, S(w.global)), ad::scale(l_term, S(w.local)),
                            ad::scale(s_term, S(w.spatial)), ad::scale(d_term, S(w.dynamic)),
                            ad::scale(f_term, S(w.feature))});
    return out;
}

} // namespace palm::model
