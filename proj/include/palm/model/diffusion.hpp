#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "palm/core/rng.hpp"
#include "palm/model/transformer.hpp"

namespace palm::model {

struct DiffusionConfig {
    int train_steps = 100;  // T
    int sample_steps = 10;
    int layers = 4;
    int heads = 4;
    int d_model = 192;
    int chunk_len = 3;      // n
    int channels = 8;       // 6 delta + gripper + progress
    double cosine_s = 0.008;
    double alpha_bar_floor = 1e-4;
    double x0_clamp = 1.5;  // targets are normalized into [-1, 1]

    void validate() const {
        if (train_steps < sample_steps)
            throw std::invalid_argument("diffusion: train_steps must be >= sample_steps");
        if (chunk_len < 1 || channels < 1)
            throw std::invalid_argument("diffusion: chunk shape must be positive");
        if (d_model % heads != 0)
            throw std::invalid_argument("diffusion: width not divisible by heads");
    }
};

/// Squared-cosine cumulative schedule,
/// abar(u) = cos^2(pi/2 (u+s)/(1+s)) / cos^2(pi/2 s/(1+s)), u = t/T,
/// floored away from zero so the deterministic sampler stays finite.
inline double cosine_alpha_bar(int t_d, int total_steps, double s = 0.008,
                               double floor = 1e-4) {
    if (t_d < 0 || t_d > total_steps)
        throw std::out_of_range("cosine_alpha_bar: t_d outside [0, T]");
    const double u = static_cast<double>(t_d) / total_steps;
    const double num = std::cos(M_PI / 2.0 * (u + s) / (1.0 + s));
    const double den = std::cos(M_PI / 2.0 * s / (1.0 + s));
    const double raw = (num * num) / (den * den);
    if (t_d == 0) return 1.0;
    return std::max(raw, floor);
}

/// y~ = sqrt(abar) y + sqrt(1-abar) eps.
template <class S>
Tensor<S> noise_target(const Tensor<S>& y, const Tensor<S>& eps, double alpha_bar) {
    if (!y.same_shape(eps))
        throw std::invalid_argument("noise_target: shape-mismatch between y and eps");
    const S a = static_cast<S>(std::sqrt(alpha_bar));
    const S b = static_cast<S>(std::sqrt(1.0 - alpha_bar));
    Tensor<S> out(y.dims());
    for (std::int64_t i = 0; i < y.size(); ++i) out[i] = a * y[i] + b * eps[i];
    return out;
}

/// Sinusoidal embedding of the diffusion step.
template <class S>
Tensor<S> diffusion_time_embedding(int t_d, int dim) {
    Tensor<S> e({1, dim});
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / std::max(1, dim / 2));
        e[2 * i] = S(std::sin(t_d * freq));
        e[2 * i + 1] = S(std::cos(t_d * freq));
    }
    return e;
}

/// Denoising transformer over the n chunk steps. Conditioning (action latent,
/// stage embedding projected from the affordance latent, diffusion-time
/// embedding) enters through adaptive layer norm with zero-initialized
/// modulations.
template <class S>
class NoisePredictor {
public:
    NoisePredictor(ParamStore<S>& ps, const std::string& prefix, const DiffusionConfig& cfg,
                   int backbone_width)
        : cfg_(cfg) {
        cfg.validate();
        const int d = cfg.d_model;
        in_w_ = ps.add(prefix + "/in_w", {cfg.channels, d}, Init::Xavier);
        in_b_ = ps.add(prefix + "/in_b", {d}, Init::Zeros);
        step_pos_ = ps.add(prefix + "/step_pos", {cfg.chunk_len, d}, Init::Normal002);

        stage_w_ = ps.add(prefix + "/stage_w", {4 * backbone_width, d}, Init::Xavier);
        stage_b_ = ps.add(prefix + "/stage_b", {d}, Init::Zeros);
        act_w_ = ps.add(prefix + "/act_w", {backbone_width, d}, Init::Xavier);
        act_b_ = ps.add(prefix + "/act_b", {d}, Init::Zeros);
        cond_mlp_ = Mlp2<S>(ps, prefix + "/cond", 3 * d, 2 * d, d);

        for (int l = 0; l < cfg.layers; ++l) {
            const std::string lp = prefix + "/layer" + std::to_string(l);
            Layer layer;
            layer.attn = RawAttention<S>(ps, lp + "/attn", d, cfg.heads);
            layer.mlp = Mlp2<S>(ps, lp + "/mlp", d, 4 * d, d);
            layer.ln1_g = ps.add(lp + "/ln1_g", {d}, Init::Ones);
            layer.ln1_b = ps.add(lp + "/ln1_b", {d}, Init::Zeros);
            layer.ln2_g = ps.add(lp + "/ln2_g", {d}, Init::Ones);
            layer.ln2_b = ps.add(lp + "/ln2_b", {d}, Init::Zeros);
            layer.mod_w = ps.add(lp + "/mod_w", {d, 6 * d}, Init::Zeros);
            layer.mod_b = ps.add(lp + "/mod_b", {6 * d}, Init::Zeros);
            layers_.push_back(layer);
        }
        final_ln_g_ = ps.add(prefix + "/final_ln_g", {d}, Init::Ones);
        final_ln_b_ = ps.add(prefix + "/final_ln_b", {d}, Init::Zeros);
        final_mod_w_ = ps.add(prefix + "/final_mod_w", {d, 2 * d}, Init::Zeros);
        final_mod_b_ = ps.add(prefix + "/final_mod_b", {2 * d}, Init::Zeros);
        out_w_ = ps.add(prefix + "/out_w", {d, cfg.channels}, Init::Zeros);
        out_b_ = ps.add(prefix + "/out_b", {cfg.channels}, Init::Zeros);
    }

    /// noised: [n, channels] constant; action_latent [1, bw]; affordance
    /// concat [1, 4*bw]; returns predicted noise [n, channels].
    ad::Value<S> forward(ParamUse<S>& p, const Tensor<S>& noised, ad::Value<S> action_latent,
                         ad::Value<S> affordance_concat, int t_d) const {
        namespace ad = palm::ad;
        for (const auto& v : noised)
            if (!std::isfinite(static_cast<double>(v)))
                throw std::invalid_argument("denoiser: non-finite input");
        if (noised.rows() != cfg_.chunk_len || noised.cols() != cfg_.channels)
            throw std::invalid_argument("denoiser: chunk shape mismatch");

        auto& g = p.graph();
        auto x = ad::add(ad::linear(g.input(noised), p(in_w_), p(in_b_)), p(step_pos_));

        auto stage = ad::linear(affordance_concat, p(stage_w_), p(stage_b_));
        auto act = ad::linear(action_latent, p(act_w_), p(act_b_));
        auto t_emb = g.input(diffusion_time_embedding<S>(t_d, cfg_.d_model));
        auto cond = cond_mlp_.forward(p, ad::concat_cols<S>({act, stage, t_emb}));

        const int d = cfg_.d_model;
        for (const auto& layer : layers_) {
            auto mod = ad::linear(cond, p(layer.mod_w), p(layer.mod_b)); // [1, 6d]
            auto scale1 = ad::slice_cols(mod, 0, d);
            auto shift1 = ad::slice_cols(mod, d, d);
            auto gate1 = ad::slice_cols(mod, 2 * d, d);
            auto scale2 = ad::slice_cols(mod, 3 * d, d);
            auto shift2 = ad::slice_cols(mod, 4 * d, d);
            auto gate2 = ad::slice_cols(mod, 5 * d, d);

            auto h = modulate(p, x, layer.ln1_g, layer.ln1_b, scale1, shift1);
            x = ad::add(x, ad::mul_row_broadcast(layer.attn.forward(p, h), gate1));
            auto h2 = modulate(p, x, layer.ln2_g, layer.ln2_b, scale2, shift2);
            x = ad::add(x, ad::mul_row_broadcast(layer.mlp.forward(p, h2), gate2));
        }
        auto mod = ad::linear(cond, p(final_mod_w_), p(final_mod_b_));
        auto h = modulate(p, x, final_ln_g_, final_ln_b_, ad::slice_cols(mod, 0, d),
                          ad::slice_cols(mod, d, d));
        return ad::linear(h, p(out_w_), p(out_b_));
    }

    const DiffusionConfig& config() const { return cfg_; }

private:
    struct Layer {
        RawAttention<S> attn;
        Mlp2<S> mlp;
        int ln1_g = -1, ln1_b = -1, ln2_g = -1, ln2_b = -1;
        int mod_w = -1, mod_b = -1;
    };

    ad::Value<S> modulate(ParamUse<S>& p, ad::Value<S> x, int ln_g, int ln_b,
                          ad::Value<S> scale, ad::Value<S> shift) const {
        namespace ad = palm::ad;
        auto normed = ad::layer_norm(x, p(ln_g), p(ln_b));
        return ad::add_row_broadcast(ad::mul_row_broadcast(normed, ad::add_scalar(scale, S(1))),
                                     shift);
    }

    DiffusionConfig cfg_;
    int in_w_, in_b_, step_pos_;
    int stage_w_, stage_b_, act_w_, act_b_;
    Mlp2<S> cond_mlp_;
    std::vector<Layer> layers_;
    int final_ln_g_, final_ln_b_, final_mod_w_, final_mod_b_, out_w_, out_b_;
};

/// Evenly spaced DDIM time grid from T down to 0 (steps+1 entries).
inline std::vector<int> ddim_time_grid(int total_steps, int sample_steps) {
    if (sample_steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
    std::vector<int> times;
    for (int i = 0; i <= sample_steps; ++i)
        times.push_back(static_cast<int>(std::llround(
            static_cast<double>(total_steps) * (sample_steps - i) / sample_steps)));
    return times;
}

/// Deterministic (eta = 0) reverse process; eps_fn(x, t) is the noise
/// predictor. The update is kept in ratio form so the floored schedule tail
/// stays numerically tame.
template <class S, class EpsFn>
Tensor<S> ddim_sample(EpsFn&& eps_fn, int chunk_len, int channels, const DiffusionConfig& cfg,
                      int sample_steps, Rng& noise_rng) {
    Tensor<S> x({chunk_len, channels});
    for (auto& v : x) v = static_cast<S>(noise_rng.normal());
    const auto times = ddim_time_grid(cfg.train_steps, sample_steps);
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
        const int t = times[i], t_next = times[i + 1];
        const Tensor<S> eps_hat = eps_fn(x, t);
        const double a_t = cosine_alpha_bar(t, cfg.train_steps, cfg.cosine_s, cfg.alpha_bar_floor);
        const double a_n =
            cosine_alpha_bar(t_next, cfg.train_steps, cfg.cosine_s, cfg.alpha_bar_floor);
        const S sa_t = static_cast<S>(std::sqrt(a_t));
        const S sa_n = static_cast<S>(std::sqrt(a_n));
        const S c1 = static_cast<S>(std::sqrt(1.0 - a_t));
        const S c2 = static_cast<S>(std::sqrt(1.0 - a_n));
        const S cl = static_cast<S>(cfg.x0_clamp);
        for (std::int64_t k = 0; k < x.size(); ++k) {
            const S x0 = std::clamp((x[k] - c1 * eps_hat[k]) / sa_t, -cl, cl);
            x[k] = sa_n * x0 + c2 * eps_hat[k];
        }
    }
    return x;
}

} // namespace palm::model
