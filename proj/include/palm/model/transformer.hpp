#pragma once

#include <optional>
#include <string>

#include "palm/core/params.hpp"

namespace palm::model {

/// Multi-head attention with pre-norm, usable as self- or cross-attention.
/// Parameter ids live in a shared ParamStore; forward() leafs them through a
/// ParamUse so one graph can reuse the block many times.
template <class S>
struct AttentionBlock {
    int heads = 1;
    int wq = -1, wk = -1, wv = -1, wo = -1;
    int bq = -1, bk = -1, bv = -1, bo = -1;
    int ln_q_g = -1, ln_q_b = -1;
    int ln_kv_g = -1, ln_kv_b = -1;

    AttentionBlock() = default;

    AttentionBlock(ParamStore<S>& ps, const std::string& prefix, int d_model, int n_heads)
        : heads(n_heads) {
        if (d_model % n_heads != 0)
            throw std::invalid_argument(prefix + ": width not divisible by heads");
        wq = ps.add(prefix + "/wq", {d_model, d_model}, Init::Xavier);
        wk = ps.add(prefix + "/wk", {d_model, d_model}, Init::Xavier);
        wv = ps.add(prefix + "/wv", {d_model, d_model}, Init::Xavier);
        wo = ps.add(prefix + "/wo", {d_model, d_model}, Init::Xavier);
        bq = ps.add(prefix + "/bq", {d_model}, Init::Zeros);
        bk = ps.add(prefix + "/bk", {d_model}, Init::Zeros);
        bv = ps.add(prefix + "/bv", {d_model}, Init::Zeros);
        bo = ps.add(prefix + "/bo", {d_model}, Init::Zeros);
        ln_q_g = ps.add(prefix + "/ln_q_g", {d_model}, Init::Ones);
        ln_q_b = ps.add(prefix + "/ln_q_b", {d_model}, Init::Zeros);
        ln_kv_g = ps.add(prefix + "/ln_kv_g", {d_model}, Init::Ones);
        ln_kv_b = ps.add(prefix + "/ln_kv_b", {d_model}, Init::Zeros);
    }

    /// Returns x_q + MHA(LN(x_q), LN(x_kv)); `allowed` is [Lq, Lkv] or empty
    /// for full attention.
    ad::Value<S> forward(ParamUse<S>& p, ad::Value<S> x_q, ad::Value<S> x_kv,
                         const Tensor<std::uint8_t>* allowed = nullptr) const {
        namespace ad = palm::ad;
        const int d = x_q.cols();
        const int dh = d / heads;
        auto q_in = ad::layer_norm(x_q, p(ln_q_g), p(ln_q_b));
        auto kv_in = x_q.idx == x_kv.idx ? q_in : ad::layer_norm(x_kv, p(ln_kv_g), p(ln_kv_b));
        auto q = ad::linear(q_in, p(wq), p(bq));
        auto k = ad::linear(kv_in, p(wk), p(bk));
        auto v = ad::linear(kv_in, p(wv), p(bv));

        Tensor<std::uint8_t> full;
        if (!allowed) {
            full = Tensor<std::uint8_t>({x_q.rows(), x_kv.rows()});
            full.fill(1);
            allowed = &full;
        }
        const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
        std::vector<ad::Value<S>> ctx;
        ctx.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            auto qh = ad::slice_cols(q, h * dh, dh);
            auto kh = ad::slice_cols(k, h * dh, dh);
            auto vh = ad::slice_cols(v, h * dh, dh);
            auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
            auto att = ad::masked_softmax_rows(scores, *allowed);
            ctx.push_back(ad::matmul(att, vh));
        }
        auto merged = heads == 1 ? ctx[0] : ad::concat_cols(ctx);
        return ad::add(x_q, ad::linear(merged, p(wo), p(bo)));
    }
};

/// Pre-norm 2-layer GELU MLP residual block.
template <class S>
struct MlpBlock {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
    int ln_g = -1, ln_b = -1;

    MlpBlock() = default;

    MlpBlock(ParamStore<S>& ps, const std::string& prefix, int d_model, int hidden) {
        w1 = ps.add(prefix + "/w1", {d_model, hidden}, Init::Xavier);
        b1 = ps.add(prefix + "/b1", {hidden}, Init::Zeros);
        w2 = ps.add(prefix + "/w2", {hidden, d_model}, Init::Xavier);
        b2 = ps.add(prefix + "/b2", {d_model}, Init::Zeros);
        ln_g = ps.add(prefix + "/ln_g", {d_model}, Init::Ones);
        ln_b = ps.add(prefix + "/ln_b", {d_model}, Init::Zeros);
    }

    ad::Value<S> forward(ParamUse<S>& p, ad::Value<S> x) const {
        namespace ad = palm::ad;
        auto h = ad::gelu(ad::linear(ad::layer_norm(x, p(ln_g), p(ln_b)), p(w1), p(b1)));
        return ad::add(x, ad::linear(h, p(w2), p(b2)));
    }
};

/// Standard pre-norm transformer layer (self-attention + MLP).
template <class S>
struct TransformerLayer {
    AttentionBlock<S> attn;
    MlpBlock<S> mlp;

    TransformerLayer() = default;

    TransformerLayer(ParamStore<S>& ps, const std::string& prefix, int d_model, int heads,
                     int mlp_hidden)
        : attn(ps, prefix + "/attn", d_model, heads),
          mlp(ps, prefix + "/mlp", d_model, mlp_hidden) {}

    ad::Value<S> forward(ParamUse<S>& p, ad::Value<S> x,
                         const Tensor<std::uint8_t>* allowed = nullptr) const {
        return mlp.forward(p, attn.forward(p, x, x, allowed));
    }
};

/// Bare multi-head self-attention: no norm, no residual (the DiT blocks wrap
/// it with adaptive modulation).
template <class S>
struct RawAttention {
    int heads = 1;
    int wq = -1, wk = -1, wv = -1, wo = -1;
    int bq = -1, bk = -1, bv = -1, bo = -1;

    RawAttention() = default;

    RawAttention(ParamStore<S>& ps, const std::string& prefix, int d_model, int n_heads)
        : heads(n_heads) {
        if (d_model % n_heads != 0)
            throw std::invalid_argument(prefix + ": width not divisible by heads");
        wq = ps.add(prefix + "/wq", {d_model, d_model}, Init::Xavier);
        wk = ps.add(prefix + "/wk", {d_model, d_model}, Init::Xavier);
        wv = ps.add(prefix + "/wv", {d_model, d_model}, Init::Xavier);
        wo = ps.add(prefix + "/wo", {d_model, d_model}, Init::Xavier);
        bq = ps.add(prefix + "/bq", {d_model}, Init::Zeros);
        bk = ps.add(prefix + "/bk", {d_model}, Init::Zeros);
        bv = ps.add(prefix + "/bv", {d_model}, Init::Zeros);
        bo = ps.add(prefix + "/bo", {d_model}, Init::Zeros);
    }

    ad::Value<S> forward(ParamUse<S>& p, ad::Value<S> x) const {
        namespace ad = palm::ad;
        const int d = x.cols();
        const int dh = d / heads;
        auto q = ad::linear(x, p(wq), p(bq));
        auto k = ad::linear(x, p(wk), p(bk));
        auto v = ad::linear(x, p(wv), p(bv));
        Tensor<std::uint8_t> full({x.rows(), x.rows()});
        full.fill(1);
        const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
        std::vector<ad::Value<S>> ctx;
        for (int h = 0; h < heads; ++h) {
            auto qh = ad::slice_cols(q, h * dh, dh);
            auto kh = ad::slice_cols(k, h * dh, dh);
            auto vh = ad::slice_cols(v, h * dh, dh);
            auto att = ad::masked_softmax_rows(
                ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt), full);
            ctx.push_back(ad::matmul(att, vh));
        }
        auto merged = heads == 1 ? ctx[0] : ad::concat_cols(ctx);
        return ad::linear(merged, p(wo), p(bo));
    }
};

/// Plain affine layer pair for small heads.
template <class S>
struct Mlp2 {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;

    Mlp2() = default;

    Mlp2(ParamStore<S>& ps, const std::string& prefix, int in, int hidden, int out) {
        w1 = ps.add(prefix + "/w1", {in, hidden}, Init::Xavier);
        b1 = ps.add(prefix + "/b1", {hidden}, Init::Zeros);
        w2 = ps.add(prefix + "/w2", {hidden, out}, Init::Xavier);
        b2 = ps.add(prefix + "/b2", {out}, Init::Zeros);
    }

    ad::Value<S> forward(ParamUse<S>& p, ad::Value<S> x) const {
        namespace ad = palm::ad;
        return ad::linear(ad::gelu(ad::linear(x, p(w1), p(b1))), p(w2), p(b2));
    }
};

/// Fixed 2-D sine-cosine positional table for an rows x cols grid, width d.
template <class S>
Tensor<S> sincos_grid(int rows, int cols, int d) {
    Tensor<S> t({rows * cols, d});
    const int quarter = d / 4;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            S* row = t.data() + (static_cast<std::int64_t>(r) * cols + c) * d;
            for (int i = 0; i < quarter; ++i) {
                const double omega = std::pow(10000.0, -2.0 * i / std::max(1, d / 2));
                row[4 * i + 0] = S(std::sin(c * omega));
                row[4 * i + 1] = S(std::cos(c * omega));
                row[4 * i + 2] = S(std::sin(r * omega));
                row[4 * i + 3] = S(std::cos(r * omega));
            }
        }
    return t;
}

} // namespace palm::model
