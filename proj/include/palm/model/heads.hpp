#pragma once

#include <string>
#include <vector>

#include "palm/model/transformer.hpp"

namespace palm::model {

struct HeadsConfig {
    int d_model = 192;
    int raster = 64;
    int patch = 8;
    int spatial_candidates = 8; // M
    int feature_dim = 192;      // matches the vision encoder width
    int vae_latent = 16;
    int layers = 2;
    int heads = 4;

    int patches_per_side() const { return raster / patch; }
    int patch_tokens() const { return patches_per_side() * patches_per_side(); }

    void validate() const {
        if (raster % patch != 0)
            throw std::invalid_argument("heads: raster not divisible by patch");
        if (spatial_candidates < 1)
            throw std::invalid_argument("heads: need at least one spatial candidate");
    }
};

/// Rearranges per-patch pixel predictions [P^2, patch^2 * C] to a flat
/// [H*W*C] raster layout.
template <class S>
ad::Value<S> assemble_patches(ad::Value<S> tokens, int patches_per_side, int patch,
                              int channels) {
    namespace ad = palm::ad;
    const int side = patches_per_side * patch;
    std::vector<ad::Value<S>> rows;
    rows.reserve(static_cast<std::size_t>(side));
    for (int r = 0; r < side; ++r) {
        const int pr = r / patch, rr = r % patch;
        std::vector<ad::Value<S>> segs;
        segs.reserve(static_cast<std::size_t>(patches_per_side));
        for (int pc = 0; pc < patches_per_side; ++pc) {
            auto tok = ad::row(tokens, pr * patches_per_side + pc);
            segs.push_back(ad::slice_cols(tok, rr * patch * channels, patch * channels));
        }
        rows.push_back(ad::concat_cols(segs));
    }
    return ad::reshape(ad::concat_rows(rows), {side * side * channels});
}

template <class S>
struct DynamicDecodeResult {
    ad::Value<S> mu, logvar; // [1, dz]
    ad::Value<S> recon;      // [H*W*3]
};

/// Train-time decoders for the four affordance latents. Global and spatial
/// are small MLP heads over fixed sine-cosine grids; local and dynamic run
/// two transformer blocks over patch tokens followed by linear projections.
template <class S>
class AffordanceHeads {
public:
    AffordanceHeads(ParamStore<S>& ps, const std::string& prefix, const HeadsConfig& cfg)
        : cfg_(cfg) {
        cfg.validate();
        const int d = cfg.d_model;

        global_mlp_ = Mlp2<S>(ps, prefix + "/global/mlp", d, d, d);
        global_bias_ = ps.add(prefix + "/global/bias", {cfg.raster * cfg.raster, 1}, Init::Zeros);
        feature_w_ = ps.add(prefix + "/global/feature_w", {d, cfg.feature_dim}, Init::Xavier);
        feature_b_ = ps.add(prefix + "/global/feature_b", {cfg.feature_dim}, Init::Zeros);

        local_in_ = ps.add(prefix + "/local/in_w", {d, d}, Init::Xavier);
        local_in_b_ = ps.add(prefix + "/local/in_b", {d}, Init::Zeros);
        for (int l = 0; l < cfg.layers; ++l)
            local_layers_.emplace_back(ps, prefix + "/local/layer" + std::to_string(l), d,
                                       cfg.heads, 4 * d);
        local_out_ = ps.add(prefix + "/local/out_w", {d, cfg.patch * cfg.patch}, Init::Xavier);
        local_out_b_ = ps.add(prefix + "/local/out_b", {cfg.patch * cfg.patch}, Init::Zeros);

        spatial_mlp_ = Mlp2<S>(ps, prefix + "/spatial/mlp", d, d, 2 * cfg.spatial_candidates);

        dyn_mu_w_ = ps.add(prefix + "/dynamic/mu_w", {d, cfg.vae_latent}, Init::Xavier);
        dyn_mu_b_ = ps.add(prefix + "/dynamic/mu_b", {cfg.vae_latent}, Init::Zeros);
        dyn_lv_w_ = ps.add(prefix + "/dynamic/lv_w", {d, cfg.vae_latent}, Init::Xavier);
        dyn_lv_b_ = ps.add(prefix + "/dynamic/lv_b", {cfg.vae_latent}, Init::Zeros);
        dyn_z_w_ = ps.add(prefix + "/dynamic/z_w", {cfg.vae_latent, d}, Init::Xavier);
        dyn_z_b_ = ps.add(prefix + "/dynamic/z_b", {d}, Init::Zeros);
        for (int l = 0; l < cfg.layers; ++l)
            dyn_layers_.emplace_back(ps, prefix + "/dynamic/layer" + std::to_string(l), d,
                                     cfg.heads, 4 * d);
        dyn_out_ = ps.add(prefix + "/dynamic/out_w", {d, cfg.patch * cfg.patch * 3}, Init::Xavier);
        dyn_out_b_ = ps.add(prefix + "/dynamic/out_b", {cfg.patch * cfg.patch * 3}, Init::Zeros);

        pixel_grid_ = sincos_grid<S>(cfg.raster, cfg.raster, d);
        patch_grid_ = sincos_grid<S>(cfg.patches_per_side(), cfg.patches_per_side(), d);
    }

    /// latent [1,d] -> (per-pixel logits [H*W], object feature [1, feat]).
    std::pair<ad::Value<S>, ad::Value<S>> decode_global(ParamUse<S>& p,
                                                        ad::Value<S> latent) const {
        namespace ad = palm::ad;
        auto f = global_mlp_.forward(p, latent); // [1, d]
        auto grid = p.graph().input(pixel_grid_);
        auto logits = ad::add(ad::matmul(grid, ad::transpose(f)), p(global_bias_));
        auto feature = ad::linear(latent, p(feature_w_), p(feature_b_));
        return {ad::reshape(logits, {cfg_.raster * cfg_.raster}), feature};
    }

    /// latent [1,d] -> heatmap logits [H*W].
    ad::Value<S> decode_local(ParamUse<S>& p, ad::Value<S> latent) const {
        namespace ad = palm::ad;
        auto inj = ad::linear(latent, p(local_in_), p(local_in_b_)); // [1, d]
        auto tokens = ad::add_row_broadcast(p.graph().input(patch_grid_),
                                            ad::reshape(inj, {cfg_.d_model}));
        for (const auto& layer : local_layers_) tokens = layer.forward(p, tokens);
        auto per_patch = ad::linear(tokens, p(local_out_), p(local_out_b_));
        return assemble_patches(per_patch, cfg_.patches_per_side(), cfg_.patch, 1);
    }

    /// latent [1,d] -> M candidate points squashed into [0,1]^2.
    ad::Value<S> decode_spatial(ParamUse<S>& p, ad::Value<S> latent) const {
        namespace ad = palm::ad;
        auto raw = spatial_mlp_.forward(p, latent); // [1, 2M]
        return ad::reshape(ad::sigmoid(raw), {cfg_.spatial_candidates, 2});
    }

    /// latent [1,d] + injected posterior noise [1,dz] -> (mu, logvar, recon).
    /// Zero noise evaluates at z = mu.
    DynamicDecodeResult<S> decode_dynamic(ParamUse<S>& p, ad::Value<S> latent,
                                          const Tensor<S>& noise) const {
        namespace ad = palm::ad;
        DynamicDecodeResult<S> out;
        out.mu = ad::linear(latent, p(dyn_mu_w_), p(dyn_mu_b_));
        out.logvar = ad::linear(latent, p(dyn_lv_w_), p(dyn_lv_b_));
        auto sigma = ad::exp_op(ad::scale(out.logvar, S(0.5)));
        auto z = ad::add(out.mu, ad::mul_const(sigma, noise));
        auto inj = ad::linear(z, p(dyn_z_w_), p(dyn_z_b_));
        auto tokens = ad::add_row_broadcast(p.graph().input(patch_grid_),
                                            ad::reshape(inj, {cfg_.d_model}));
        for (const auto& layer : dyn_layers_) tokens = layer.forward(p, tokens);
        auto per_patch = ad::linear(tokens, p(dyn_out_), p(dyn_out_b_));
        out.recon = assemble_patches(per_patch, cfg_.patches_per_side(), cfg_.patch, 3);
        return out;
    }

    const HeadsConfig& config() const { return cfg_; }

private:
    HeadsConfig cfg_;
    Mlp2<S> global_mlp_, spatial_mlp_;
    int global_bias_ = -1, feature_w_ = -1, feature_b_ = -1;
    int local_in_ = -1, local_in_b_ = -1, local_out_ = -1, local_out_b_ = -1;
    int dyn_mu_w_ = -1, dyn_mu_b_ = -1, dyn_lv_w_ = -1, dyn_lv_b_ = -1;
    int dyn_z_w_ = -1, dyn_z_b_ = -1, dyn_out_ = -1, dyn_out_b_ = -1;
    std::vector<TransformerLayer<S>> local_layers_, dyn_layers_;
    Tensor<S> pixel_grid_, patch_grid_;
};

} // namespace palm::model
