#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "palm/model/config.hpp"

namespace palm::model {

/// One preprocessed observation frame at the model boundary.
template <class S>
struct FrameInput {
    Tensor<S> base; // [H*W*3] in [0,1]
    Tensor<S> hand;
    std::array<double, 6> pose{}; // raw pixel units
    int gripper = 0;
};

/// Resampled per-frame tokens cached during closed-loop rollout.
template <class S>
struct EncodedFrame {
    Tensor<S> base_tokens;  // [R, d_model]
    Tensor<S> hand_tokens;  // [R, d_model]
    Tensor<S> state_token;  // [1, d_model]
};

template <class S>
struct SampledChunk {
    Tensor<S> raw;                               // [n, channels] in diffusion units
    std::vector<std::array<double, 6>> deltas;   // env units
    std::vector<int> gripper;                    // thresholded commands
    std::vector<double> progress;                // [0,1]; empty when no_progress
};

/// The complete policy: multimodal encoders, structured-attention backbone,
/// train-time affordance heads and the diffusion action-progress head.
template <class S>
class PalmModel {
public:
    PalmModel(ModelConfig cfg, std::uint64_t init_seed,
              std::vector<std::string> vocab = env::build_vocabulary())
        : cfg_(finalized(std::move(cfg), vocab)), vocab_(std::move(vocab)),
          store_(init_seed),
          image_encoder_(store_, "encoder/image", cfg_.encoder),
          resampler_(store_, "encoder/resampler", cfg_.encoder),
          instruction_encoder_(store_, "encoder/text", cfg_.encoder),
          state_encoder_(store_, "encoder/state", cfg_.encoder),
          backbone_(store_, "backbone", cfg_.backbone),
          heads_(store_, "heads", cfg_.heads),
          dit_(store_, "dit", cfg_.diffusion, cfg_.backbone.d_model) {
        view_emb_ = store_.add("encoder/view_emb", {2, cfg_.encoder.d_model}, Init::Normal002);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<S>& params() { return store_; }
    const std::vector<std::string>& vocab() const { return vocab_; }

    FrameInput<S> frame_from_record(const env::FrameRecord& f) const {
        FrameInput<S> in;
        in.base = to_unit_tensor(f.base);
        in.hand = to_unit_tensor(f.hand);
        for (int i = 0; i < 6; ++i) in.pose[static_cast<std::size_t>(i)] = f.state[static_cast<std::size_t>(i)];
        in.gripper = f.state[6] != 0.0 ? 1 : 0;
        return in;
    }

    FrameInput<S> frame_from_observation(const env::Observation& o) const {
        FrameInput<S> in;
        in.base = to_unit_tensor(o.base_view);
        in.hand = to_unit_tensor(o.hand_view);
        in.pose = o.state_pose;
        in.gripper = o.state_gripper;
        return in;
    }

    /// Encoders + context assembly + backbone on an existing graph.
    BackboneOutput<S> encode_and_fuse(ParamUse<S>& p, const std::vector<FrameInput<S>>& frames,
                                      const std::vector<int>& token_ids, int stage) const {
        namespace ad = palm::ad;
        if (static_cast<int>(frames.size()) != cfg_.history_length)
            throw std::invalid_argument("wrong-history-length: expected " +
                                        std::to_string(cfg_.history_length) + " frames");
        auto& g = p.graph();
        std::vector<ad::Value<S>> base_tokens, hand_tokens, state_tokens;
        auto view0 = ad::reshape(ad::row(p(view_emb_), 0), {cfg_.encoder.d_model});
        auto view1 = ad::reshape(ad::row(p(view_emb_), 1), {cfg_.encoder.d_model});
        for (const auto& f : frames) {
            auto b = resampler_.forward(p, image_encoder_.forward(p, f.base));
            auto h = resampler_.forward(p, image_encoder_.forward(p, f.hand));
            base_tokens.push_back(ad::add_row_broadcast(b, view0));
            hand_tokens.push_back(ad::add_row_broadcast(h, view1));
            Tensor<S> pose({1, 6});
            for (int i = 0; i < 6; ++i)
                pose[i] = static_cast<S>(f.pose[static_cast<std::size_t>(i)] /
                                         cfg_.scene.table_size);
            state_tokens.push_back(state_encoder_.forward(p, g.input(std::move(pose)), f.gripper));
        }
        auto text = instruction_encoder_.forward(p, token_ids, stage);
        auto ctx = assemble_context<S>(text, base_tokens, hand_tokens, state_tokens,
                                       backbone_.query_tokens(p), cfg_.history_length);
        return backbone_.forward(p, ctx);
    }

    struct TrainOut {
        ad::Value<S> total;
        std::map<std::string, double> breakdown;
    };

    /// Builds the full training loss for one sample on graph g. Ablation
    /// flags (baked into the config) skip or detach the documented pieces.
    /// frame_pretrain swaps the affordance terms for a whole-frame VAE
    /// reconstruction warm-up objective.
    TrainOut training_loss(ParamUse<S>& p, const supervision::TrainingSample& sample,
                           const LossWeights& weights, Rng& rng, bool frame_pretrain = false) {
        namespace ad = palm::ad;
        const env::EpisodeRecord& ep = *sample.episode;

        std::vector<FrameInput<S>> frames;
        for (int idx : sample.history)
            frames.push_back(frame_from_record(ep.frames[static_cast<std::size_t>(idx)]));
        const std::vector<int> ids = env::tokenize(ep.instruction, vocab_);
        BackboneOutput<S> latents = encode_and_fuse(p, frames, ids, sample.stage);

        TrainOut out;
        out.breakdown = {{"global", 0.0}, {"local", 0.0},   {"spatial", 0.0},
                         {"dynamic", 0.0}, {"feature", 0.0}, {"diffusion", 0.0}};
        std::vector<ad::Value<S>> pieces;

        if (frame_pretrain) {
            // Warm-up objective: reconstruct the entire future frame through
            // the dynamic latent pathway.
            Tensor<S> vae_noise({1, cfg_.heads.vae_latent});
            for (auto& v : vae_noise) v = static_cast<S>(rng.normal());
            auto dyn = heads_.decode_dynamic(p, latents.dynamic, vae_noise);
            Tensor<S> full_mask({static_cast<int>(sample.targets.future_rgb.size())});
            full_mask.fill(S(1));
            Tensor<S> future({static_cast<int>(sample.targets.future_rgb.size())});
            for (std::int64_t i = 0; i < future.size(); ++i)
                future[i] = static_cast<S>(sample.targets.future_rgb[static_cast<std::size_t>(i)]);
            auto frame_loss = masked_vae_loss(dyn.mu, dyn.logvar, dyn.recon, future, full_mask,
                                              static_cast<S>(weights.beta));
            out.breakdown["dynamic"] = static_cast<double>(frame_loss.item());
            pieces.push_back(ad::scale(frame_loss, static_cast<S>(weights.dynamic)));
        } else if (!cfg_.ablation.no_affordance) {
            auto [global_logits, feature] = heads_.decode_global(p, latents.global);
            auto local_logits = heads_.decode_local(p, latents.local);
            auto spatial = heads_.decode_spatial(p, latents.spatial);
            Tensor<S> vae_noise({1, cfg_.heads.vae_latent});
            for (auto& v : vae_noise) v = static_cast<S>(rng.normal());
            auto dyn = heads_.decode_dynamic(p, latents.dynamic, vae_noise);

            AffordanceLossInputs<S> in{global_logits, feature, local_logits, spatial,
                                       dyn.mu,        dyn.logvar, dyn.recon};
            AffordanceLossTargets<S> tg = make_targets(sample);
            AffordanceLossBreakdown<S> bd = affordance_total_loss(in, tg, weights);
            for (const auto& [k, v] : bd.terms) out.breakdown[k] = v;
            pieces.push_back(bd.total);
        }

        // Diffusion objective on the normalized action-progress chunk.
        const Tensor<S> y = normalized_chunk(sample);
        const int t_d = 1 + static_cast<int>(rng.uniform_int(
                                static_cast<std::uint64_t>(cfg_.diffusion.train_steps)));
        Tensor<S> eps(y.dims());
        for (auto& v : eps) v = static_cast<S>(rng.normal());
        const Tensor<S> noised = noise_target(
            y, eps, cosine_alpha_bar(t_d, cfg_.diffusion.train_steps, cfg_.diffusion.cosine_s,
                                     cfg_.diffusion.alpha_bar_floor));

        auto f_concat = latents.affordance_concat();
        if (cfg_.ablation.no_affordance) f_concat = ad::stop_gradient(f_concat);
        auto eps_hat = dit_.forward(p, noised, latents.action, f_concat, t_d);
        auto dit_loss = ad::mean_sq_diff(eps_hat, eps);
        out.breakdown["diffusion"] = static_cast<double>(dit_loss.item());
        pieces.push_back(ad::scale(dit_loss, static_cast<S>(weights.diffusion)));

        out.total = pieces.size() == 1 ? pieces[0] : ad::add(pieces);
        return out;
    }

    /// Per-frame token computation with frozen weights (rollout cache).
    EncodedFrame<S> encode_frame_inference(const FrameInput<S>& f) {
        namespace ad = palm::ad;
        ad::Graph<S> g;
        ParamUse<S> p(g, store_, /*trainable=*/false);
        auto view0 = ad::reshape(ad::row(p(view_emb_), 0), {cfg_.encoder.d_model});
        auto view1 = ad::reshape(ad::row(p(view_emb_), 1), {cfg_.encoder.d_model});
        EncodedFrame<S> out;
        out.base_tokens = ad::add_row_broadcast(
                              resampler_.forward(p, image_encoder_.forward(p, f.base)), view0)
                              .val()
                              .clone();
        out.hand_tokens = ad::add_row_broadcast(
                              resampler_.forward(p, image_encoder_.forward(p, f.hand)), view1)
                              .val()
                              .clone();
        Tensor<S> pose({1, 6});
        for (int i = 0; i < 6; ++i)
            pose[i] = static_cast<S>(f.pose[static_cast<std::size_t>(i)] / cfg_.scene.table_size);
        out.state_token =
            state_encoder_.forward(p, g.input(std::move(pose)), f.gripper).val().clone();
        return out;
    }

    /// DDIM sampling of one action-progress chunk from cached frame tokens.
    SampledChunk<S> sample_chunk_cached(const std::vector<const EncodedFrame<S>*>& frames,
                                        const std::vector<int>& token_ids, int stage,
                                        int sample_steps, Rng& noise_rng) {
        namespace ad = palm::ad;
        if (static_cast<int>(frames.size()) != cfg_.history_length)
            throw std::invalid_argument("wrong-history-length in cached sampling");
        ad::Graph<S> g;
        ParamUse<S> p(g, store_, /*trainable=*/false);

        std::vector<ad::Value<S>> base_tokens, hand_tokens, state_tokens;
        for (const auto* f : frames) {
            base_tokens.push_back(g.input(f->base_tokens));
            hand_tokens.push_back(g.input(f->hand_tokens));
            state_tokens.push_back(g.input(f->state_token));
        }
        auto text = instruction_encoder_.forward(p, token_ids, stage);
        auto ctx = assemble_context<S>(text, base_tokens, hand_tokens, state_tokens,
                                       backbone_.query_tokens(p), cfg_.history_length);
        BackboneOutput<S> latents = backbone_.forward(p, ctx);
        return run_sampler(p, latents, sample_steps, noise_rng);
    }

    SampledChunk<S> sample_chunk(const std::vector<FrameInput<S>>& frames,
                                 const std::vector<int>& token_ids, int stage, int sample_steps,
                                 Rng& noise_rng) {
        namespace ad = palm::ad;
        ad::Graph<S> g;
        ParamUse<S> p(g, store_, /*trainable=*/false);
        BackboneOutput<S> latents = encode_and_fuse(p, frames, token_ids, stage);
        return run_sampler(p, latents, sample_steps, noise_rng);
    }

    /// Mean encoder patch feature over the patches that overlap the mask,
    /// with frozen weights (regression target for the global head).
    Tensor<S> pooled_feature_target(const env::ImageU8& frame, const supervision::Map& mask) {
        namespace ad = palm::ad;
        ad::Graph<S> g;
        ParamUse<S> p(g, store_, /*trainable=*/false);
        auto tokens = image_encoder_.forward(p, to_unit_tensor(frame));
        const int ps = cfg_.encoder.patches_per_side();
        const int patch = cfg_.encoder.patch;
        const int side = cfg_.encoder.raster;
        Tensor<S> feature({1, cfg_.encoder.vision_width});
        int hits = 0;
        for (int pr = 0; pr < ps; ++pr)
            for (int pc = 0; pc < ps; ++pc) {
                bool overlap = false;
                for (int r = pr * patch; r < (pr + 1) * patch && !overlap; ++r)
                    for (int c = pc * patch; c < (pc + 1) * patch && !overlap; ++c)
                        if (mask[static_cast<std::size_t>(r) * side + c] > 0) overlap = true;
                if (!overlap) continue;
                ++hits;
                const Tensor<S>& tv = tokens.val();
                const int row = 1 + pr * ps + pc; // row 0 is the summary token
                for (int j = 0; j < cfg_.encoder.vision_width; ++j)
                    feature[j] += tv.at(row, j);
            }
        if (hits > 0)
            for (auto& v : feature) v /= static_cast<S>(hits);
        return feature;
    }

    AffordanceLossTargets<S> make_targets(const supervision::TrainingSample& sample) {
        AffordanceLossTargets<S> tg;
        tg.global_mask = to_tensor(sample.targets.global_mask);
        tg.local_heatmap = to_tensor(sample.targets.local_heatmap);
        const int c_count = static_cast<int>(sample.targets.spatial_points.size());
        tg.spatial_points = Tensor<S>({c_count, 2});
        for (int c = 0; c < c_count; ++c) {
            tg.spatial_points.at(c, 0) = static_cast<S>(sample.targets.spatial_points[static_cast<std::size_t>(c)][0]);
            tg.spatial_points.at(c, 1) = static_cast<S>(sample.targets.spatial_points[static_cast<std::size_t>(c)][1]);
        }
        tg.future_pixels = Tensor<S>({static_cast<int>(sample.targets.future_rgb.size())});
        for (std::int64_t i = 0; i < tg.future_pixels.size(); ++i)
            tg.future_pixels[i] = static_cast<S>(sample.targets.future_rgb[static_cast<std::size_t>(i)]);
        tg.mask3 = Tensor<S>({static_cast<int>(sample.targets.dynamic_mask.size()) * 3});
        for (std::size_t i = 0; i < sample.targets.dynamic_mask.size(); ++i)
            for (int c = 0; c < 3; ++c)
                tg.mask3[static_cast<std::int64_t>(i) * 3 + c] =
                    static_cast<S>(sample.targets.dynamic_mask[i]);
        const int fut = sample.t + cfg_.supervision.future_offset;
        tg.feature = pooled_feature_target(
            sample.episode->frames[static_cast<std::size_t>(fut)].base,
            sample.targets.global_mask);
        tg.norm_eps = static_cast<S>(cfg_.supervision.norm_epsilon);
        return tg;
    }

    /// Action-progress rows mapped to diffusion units in [-1, 1].
    Tensor<S> normalized_chunk(const supervision::TrainingSample& sample) const {
        const int n = cfg_.diffusion.chunk_len;
        const int ch = cfg_.diffusion.channels;
        Tensor<S> y({n, ch});
        for (int i = 0; i < n; ++i) {
            const auto& row = sample.chunk[static_cast<std::size_t>(i)];
            for (int j = 0; j < 6; ++j)
                y.at(i, j) = static_cast<S>(
                    std::clamp(row[static_cast<std::size_t>(j)] / cfg_.max_step, -1.0, 1.0));
            y.at(i, 6) = static_cast<S>(2.0 * row[6] - 1.0);
            if (ch == 8) y.at(i, 7) = static_cast<S>(2.0 * row[7] - 1.0);
        }
        return y;
    }

private:
    static ModelConfig finalized(ModelConfig cfg, const std::vector<std::string>& vocab) {
        cfg.encoder.vocab_size = static_cast<int>(vocab.size());
        cfg.finalize();
        return cfg;
    }

    Tensor<S> to_unit_tensor(const env::ImageU8& img) const {
        Tensor<S> t({static_cast<int>(img.pixels.size())});
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            t[static_cast<std::int64_t>(i)] = static_cast<S>(img.pixels[i]) / S(255);
        return t;
    }

    Tensor<S> to_tensor(const supervision::Map& m) const {
        Tensor<S> t({static_cast<int>(m.size())});
        for (std::size_t i = 0; i < m.size(); ++i)
            t[static_cast<std::int64_t>(i)] = static_cast<S>(m[i]);
        return t;
    }

    SampledChunk<S> run_sampler(ParamUse<S>& p, const BackboneOutput<S>& latents,
                                int sample_steps, Rng& noise_rng) {
        const int n = cfg_.diffusion.chunk_len;
        const int ch = cfg_.diffusion.channels;
        auto f_concat = latents.affordance_concat();
        Tensor<S> x = ddim_sample<S>(
            [&](const Tensor<S>& xt, int t) {
                return dit_.forward(p, xt, latents.action, f_concat, t).val();
            },
            n, ch, cfg_.diffusion, sample_steps, noise_rng);

        SampledChunk<S> out;
        out.raw = x;
        for (int i = 0; i < n; ++i) {
            std::array<double, 6> d{};
            for (int j = 0; j < 6; ++j)
                d[static_cast<std::size_t>(j)] =
                    std::clamp(static_cast<double>(x.at(i, j)), -1.0, 1.0) * cfg_.max_step;
            out.deltas.push_back(d);
            out.gripper.push_back(x.at(i, 6) > S(0) ? 1 : 0);
            if (ch == 8)
                out.progress.push_back(
                    std::clamp((static_cast<double>(x.at(i, 7)) + 1.0) / 2.0, 0.0, 1.0));
        }
        return out;
    }

    ModelConfig cfg_;
    std::vector<std::string> vocab_;
    ParamStore<S> store_;
    ImageEncoder<S> image_encoder_;
    TokenResampler<S> resampler_;
    InstructionEncoder<S> instruction_encoder_;
    StateEncoder<S> state_encoder_;
    Backbone<S> backbone_;
    AffordanceHeads<S> heads_;
    NoisePredictor<S> dit_;
    int view_emb_ = -1;
};

} // namespace palm::model
