#pragma once

#include <string>
#include <vector>

#include "palm/env/scene.hpp"
#include "palm/model/transformer.hpp"

namespace palm::model {

struct EncoderConfig {
    int raster = 64;          // square input side
    int patch = 8;
    int vision_width = 192;
    int vision_layers = 2;
    int vision_heads = 4;
    int resampled_tokens = 8; // per view
    int resampler_layers = 3;
    int resampler_heads = 8;
    int vocab_size = 20;
    int state_width = 64;
    int d_model = 192;
    int max_stages = 8;

    int patches_per_side() const { return raster / patch; }
    int patch_tokens() const { return patches_per_side() * patches_per_side(); }

    void validate() const {
        if (raster % patch != 0)
            throw std::invalid_argument("encoder: raster side not divisible by patch size");
        if (vision_width <= 0 || d_model <= 0 || state_width <= 0 || vocab_size <= 0 ||
            resampled_tokens <= 0)
            throw std::invalid_argument("encoder: widths must be positive");
    }
};

/// Trainable patch-embedding transformer; emits patch tokens plus one summary
/// token, all of vision_width.
template <class S>
class ImageEncoder {
public:
    ImageEncoder(ParamStore<S>& ps, const std::string& prefix, const EncoderConfig& cfg)
        : cfg_(cfg) {
        cfg.validate();
        const int pd = cfg.patch * cfg.patch * 3;
        patch_w_ = ps.add(prefix + "/patch_w", {pd, cfg.vision_width}, Init::Xavier);
        patch_b_ = ps.add(prefix + "/patch_b", {cfg.vision_width}, Init::Zeros);
        pos_ = ps.add(prefix + "/pos", {cfg.patch_tokens(), cfg.vision_width}, Init::Normal002);
        summary_ = ps.add(prefix + "/summary", {1, cfg.vision_width}, Init::Normal002);
        for (int l = 0; l < cfg.vision_layers; ++l)
            layers_.emplace_back(ps, prefix + "/layer" + std::to_string(l), cfg.vision_width,
                                 cfg.vision_heads, 4 * cfg.vision_width);
        ln_g_ = ps.add(prefix + "/ln_g", {cfg.vision_width}, Init::Ones);
        ln_b_ = ps.add(prefix + "/ln_b", {cfg.vision_width}, Init::Zeros);
    }

    /// rgb is a [H*W*3] tensor in [0,1]; returns [(patch_tokens+1), vision_width]
    /// with the summary token first. With `positional` false the learned
    /// patch-position table is skipped.
    ad::Value<S> forward(ParamUse<S>& p, const Tensor<S>& rgb, bool positional = true) const {
        namespace ad = palm::ad;
        const int side = cfg_.raster;
        if (rgb.size() != static_cast<std::int64_t>(side) * side * 3)
            throw std::invalid_argument("encode_image: shape-mismatch, expected " +
                                        std::to_string(side) + "x" + std::to_string(side) + "x3");
        const int ps_ct = cfg_.patches_per_side();
        const int pd = cfg_.patch * cfg_.patch * 3;
        Tensor<S> patches({cfg_.patch_tokens(), pd});
        for (int pr = 0; pr < ps_ct; ++pr)
            for (int pc = 0; pc < ps_ct; ++pc) {
                S* dst = patches.data() +
                         (static_cast<std::int64_t>(pr) * ps_ct + pc) * pd;
                for (int r = 0; r < cfg_.patch; ++r)
                    for (int c = 0; c < cfg_.patch; ++c) {
                        const int row = pr * cfg_.patch + r, col = pc * cfg_.patch + c;
                        const S* src =
                            rgb.data() + (static_cast<std::int64_t>(row) * side + col) * 3;
                        S* d = dst + (static_cast<std::int64_t>(r) * cfg_.patch + c) * 3;
                        d[0] = src[0];
                        d[1] = src[1];
                        d[2] = src[2];
                    }
            }
        auto& g = p.graph();
        auto x = ad::linear(g.input(std::move(patches)), p(patch_w_), p(patch_b_));
        if (positional) x = ad::add(x, p(pos_));
        x = ad::concat_rows<S>({p(summary_), x});
        for (const auto& layer : layers_) x = layer.forward(p, x);
        return ad::layer_norm(x, p(ln_g_), p(ln_b_));
    }

    int token_count() const { return cfg_.patch_tokens() + 1; }

private:
    EncoderConfig cfg_;
    int patch_w_, patch_b_, pos_, summary_, ln_g_, ln_b_;
    std::vector<TransformerLayer<S>> layers_;
};

/// Latent-query resampler: a fixed set of learned latents cross-attends to
/// the encoder tokens, so the output count is independent of the input count.
template <class S>
class TokenResampler {
public:
    TokenResampler(ParamStore<S>& ps, const std::string& prefix, const EncoderConfig& cfg) {
        latents_ = ps.add(prefix + "/latents", {cfg.resampled_tokens, cfg.vision_width},
                          Init::Normal002);
        for (int l = 0; l < cfg.resampler_layers; ++l) {
            cross_.emplace_back(ps, prefix + "/cross" + std::to_string(l), cfg.vision_width,
                                cfg.resampler_heads);
            mlps_.emplace_back(ps, prefix + "/mlp" + std::to_string(l), cfg.vision_width,
                               4 * cfg.vision_width);
        }
        proj_w_ = ps.add(prefix + "/proj_w", {cfg.vision_width, cfg.d_model}, Init::Xavier);
        proj_b_ = ps.add(prefix + "/proj_b", {cfg.d_model}, Init::Zeros);
    }

    /// tokens: [N, vision_width] with N >= 1 -> [resampled_tokens, d_model].
    ad::Value<S> forward(ParamUse<S>& p, ad::Value<S> tokens) const {
        namespace ad = palm::ad;
        if (tokens.rows() < 1) throw std::invalid_argument("resample: empty token set");
        auto x = p(latents_);
        for (std::size_t l = 0; l < cross_.size(); ++l) {
            x = cross_[l].forward(p, x, tokens);
            x = mlps_[l].forward(p, x);
        }
        return ad::linear(x, p(proj_w_), p(proj_b_));
    }

private:
    int latents_, proj_w_, proj_b_;
    std::vector<AttentionBlock<S>> cross_;
    std::vector<MlpBlock<S>> mlps_;
};

/// Lookup-and-pool instruction encoder over the closed template vocabulary,
/// with a learned stage embedding added for the controller's subtask focus.
template <class S>
class InstructionEncoder {
public:
    InstructionEncoder(ParamStore<S>& ps, const std::string& prefix, const EncoderConfig& cfg)
        : vocab_size_(cfg.vocab_size), max_stages_(cfg.max_stages) {
        table_ = ps.add(prefix + "/table", {cfg.vocab_size, cfg.d_model}, Init::Normal002);
        stage_ = ps.add(prefix + "/stage", {cfg.max_stages, cfg.d_model}, Init::Normal002);
        mlp_ = Mlp2<S>(ps, prefix + "/mlp", cfg.d_model, 2 * cfg.d_model, cfg.d_model);
    }

    /// token ids -> [1, d_model]; stage < 0 skips the stage embedding.
    ad::Value<S> forward(ParamUse<S>& p, const std::vector<int>& ids, int stage) const {
        namespace ad = palm::ad;
        for (int id : ids)
            if (id < 0 || id >= vocab_size_)
                throw std::out_of_range("encode_instruction: out-of-vocabulary id " +
                                        std::to_string(id));
        auto pooled = ad::mean_rows(ad::embedding(p(table_), ids));
        auto tok = mlp_.forward(p, pooled);
        if (stage >= 0) {
            const int s = std::min(stage, max_stages_ - 1);
            tok = ad::add(tok, ad::embedding(p(stage_), {s}));
        }
        return tok;
    }

private:
    int vocab_size_, max_stages_;
    int table_, stage_;
    Mlp2<S> mlp_;
};

/// Pose and one-hot gripper branches concatenated through a final 2-layer map.
template <class S>
class StateEncoder {
public:
    StateEncoder(ParamStore<S>& ps, const std::string& prefix, const EncoderConfig& cfg) {
        pose_w_ = ps.add(prefix + "/pose_w", {6, cfg.state_width}, Init::Xavier);
        pose_b_ = ps.add(prefix + "/pose_b", {cfg.state_width}, Init::Zeros);
        grip_w_ = ps.add(prefix + "/grip_w", {2, cfg.state_width}, Init::Xavier);
        grip_b_ = ps.add(prefix + "/grip_b", {cfg.state_width}, Init::Zeros);
        mlp_ = Mlp2<S>(ps, prefix + "/mlp", 2 * cfg.state_width, 2 * cfg.state_width,
                       cfg.d_model);
    }

    /// pose: [1,6] graph value (normalized by the caller); gripper in {0,1}.
    ad::Value<S> forward(ParamUse<S>& p, ad::Value<S> pose, int gripper) const {
        namespace ad = palm::ad;
        if (gripper != 0 && gripper != 1)
            throw std::invalid_argument("encode_state: gripper must be 0 or 1");
        Tensor<S> onehot({1, 2});
        onehot[gripper] = S(1);
        auto& g = p.graph();
        auto a = ad::linear(pose, p(pose_w_), p(pose_b_));
        auto b = ad::linear(g.input(std::move(onehot)), p(grip_w_), p(grip_b_));
        return mlp_.forward(p, ad::concat_cols<S>({a, b}));
    }

private:
    int pose_w_, pose_b_, grip_w_, grip_b_;
    Mlp2<S> mlp_;
};

enum class TokenRole : std::uint8_t { Context = 0, AffordanceQuery = 1, ActionQuery = 2 };

/// Fused multimodal token sequence plus per-token role/timestep tags.
template <class S>
struct ContextSequence {
    ad::Value<S> tokens; // [L, d_model]
    std::vector<TokenRole> roles;
    std::vector<int> timesteps;
    int query_offset = 0; // row of the first affordance query

    int length() const { return static_cast<int>(roles.size()); }
};

/// Layout: [text, (base tokens, hand tokens, state) x history, queries].
/// The 4+1 query tokens are learned parameters passed in by the backbone and
/// are tagged with the final timestep.
template <class S>
ContextSequence<S> assemble_context(ad::Value<S> text_token,
                                    const std::vector<ad::Value<S>>& base_tokens,
                                    const std::vector<ad::Value<S>>& hand_tokens,
                                    const std::vector<ad::Value<S>>& state_tokens,
                                    ad::Value<S> query_tokens, int history_length) {
    namespace ad = palm::ad;
    if (static_cast<int>(base_tokens.size()) != history_length ||
        static_cast<int>(hand_tokens.size()) != history_length ||
        static_cast<int>(state_tokens.size()) != history_length)
        throw std::invalid_argument("assemble_context: wrong-history-length, expected " +
                                    std::to_string(history_length) + " frames");
    if (query_tokens.rows() != 5)
        throw std::invalid_argument("assemble_context: expected 4+1 query tokens");

    ContextSequence<S> ctx;
    std::vector<ad::Value<S>> parts;
    parts.push_back(text_token);
    ctx.roles.push_back(TokenRole::Context);
    ctx.timesteps.push_back(0);
    for (int t = 0; t < history_length; ++t) {
        parts.push_back(base_tokens[static_cast<std::size_t>(t)]);
        parts.push_back(hand_tokens[static_cast<std::size_t>(t)]);
        parts.push_back(state_tokens[static_cast<std::size_t>(t)]);
        const int block = base_tokens[static_cast<std::size_t>(t)].rows() +
                          hand_tokens[static_cast<std::size_t>(t)].rows() +
                          state_tokens[static_cast<std::size_t>(t)].rows();
        for (int i = 0; i < block; ++i) {
            ctx.roles.push_back(TokenRole::Context);
            ctx.timesteps.push_back(t);
        }
    }
    ctx.query_offset = static_cast<int>(ctx.roles.size());
    parts.push_back(query_tokens);
    for (int i = 0; i < 4; ++i) {
        ctx.roles.push_back(TokenRole::AffordanceQuery);
        ctx.timesteps.push_back(history_length - 1);
    }
    ctx.roles.push_back(TokenRole::ActionQuery);
    ctx.timesteps.push_back(history_length - 1);

    ctx.tokens = ad::concat_rows(parts);
    return ctx;
}

} // namespace palm::model
