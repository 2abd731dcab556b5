#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "palm/core/graph.hpp"

namespace palm::ad {

namespace detail {

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

template <class S>
bool wants(Graph<S>& g, int p) {
    return g.node(p).requires_grad;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class S>
Value<S> add(Value<S> a, Value<S> b) {
    detail::check_same_shape(a.val(), b.val(), "add");
    Tensor<S> out = a.val().clone();
    const Tensor<S>& bv = b.val();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return a.graph->make(std::move(out), {a.idx, b.idx},
                         [pa = a.idx, pb = b.idx](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (detail::wants(g, pa)) {
                                 Tensor<S>& da = g.grad_buffer(pa);
                                 for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i];
                             }
                             if (detail::wants(g, pb)) {
                                 Tensor<S>& db = g.grad_buffer(pb);
                                 for (std::int64_t i = 0; i < n.grad.size(); ++i) db[i] += n.grad[i];
                             }
                         });
}

template <class S>
Value<S> add(const std::vector<Value<S>>& xs) {
    if (xs.empty()) throw std::invalid_argument("add: empty operand list");
    Value<S> acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

template <class S>
Value<S> sub(Value<S> a, Value<S> b) {
    detail::check_same_shape(a.val(), b.val(), "sub");
    Tensor<S> out = a.val().clone();
    const Tensor<S>& bv = b.val();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return a.graph->make(std::move(out), {a.idx, b.idx},
                         [pa = a.idx, pb = b.idx](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (detail::wants(g, pa)) {
                                 Tensor<S>& da = g.grad_buffer(pa);
                                 for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i];
                             }
                             if (detail::wants(g, pb)) {
                                 Tensor<S>& db = g.grad_buffer(pb);
                                 for (std::int64_t i = 0; i < n.grad.size(); ++i) db[i] -= n.grad[i];
                             }
                         });
}

template <class S>
Value<S> mul(Value<S> a, Value<S> b) {
    detail::check_same_shape(a.val(), b.val(), "mul");
    Tensor<S> out = a.val().clone();
    const Tensor<S>& bv = b.val();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return a.graph->make(
        std::move(out), {a.idx, b.idx},
        [pa = a.idx, pb = b.idx, av = a.val(), bv2 = b.val()](Graph<S>& g,
                                                              typename Graph<S>::Node& n) {
            if (detail::wants(g, pa)) {
                Tensor<S>& da = g.grad_buffer(pa);
                for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i] * bv2[i];
            }
            if (detail::wants(g, pb)) {
                Tensor<S>& db = g.grad_buffer(pb);
                for (std::int64_t i = 0; i < n.grad.size(); ++i) db[i] += n.grad[i] * av[i];
            }
        });
}

template <class S>
Value<S> div(Value<S> a, Value<S> b) {
    detail::check_same_shape(a.val(), b.val(), "div");
    Tensor<S> out = a.val().clone();
    const Tensor<S>& bv = b.val();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= bv[i];
    return a.graph->make(
        std::move(out), {a.idx, b.idx},
        [pa = a.idx, pb = b.idx, av = a.val(), bv2 = b.val()](Graph<S>& g,
                                                              typename Graph<S>::Node& n) {
            if (detail::wants(g, pa)) {
                Tensor<S>& da = g.grad_buffer(pa);
                for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i] / bv2[i];
            }
            if (detail::wants(g, pb)) {
                Tensor<S>& db = g.grad_buffer(pb);
                for (std::int64_t i = 0; i < n.grad.size(); ++i)
                    db[i] -= n.grad[i] * av[i] / (bv2[i] * bv2[i]);
            }
        });
}

template <class S>
Value<S> neg(Value<S> a) {
    Tensor<S> out = a.val().clone();
    for (auto& x : out) x = -x;
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] -= n.grad[i];
                         });
}

template <class S>
Value<S> scale(Value<S> a, S c) {
    Tensor<S> out = a.val().clone();
    for (auto& x : out) x *= c;
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx, c](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (std::int64_t i = 0; i < n.grad.size(); ++i)
                                 da[i] += c * n.grad[i];
                         });
}

template <class S>
Value<S> add_scalar(Value<S> a, S c) {
    Tensor<S> out = a.val().clone();
    for (auto& x : out) x += c;
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i];
                         });
}

/// a - t for a constant tensor t (no gradient to t).
template <class S>
Value<S> sub_const(Value<S> a, const Tensor<S>& t) {
    detail::check_same_shape(a.val(), t, "sub_const");
    Tensor<S> out = a.val().clone();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= t[i];
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i];
                         });
}

/// Elementwise product with a constant tensor.
template <class S>
Value<S> mul_const(Value<S> a, const Tensor<S>& m) {
    detail::check_same_shape(a.val(), m, "mul_const");
    Tensor<S> out = a.val().clone();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= m[i];
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx, m](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (std::int64_t i = 0; i < n.grad.size(); ++i)
                                 da[i] += n.grad[i] * m[i];
                         });
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <class S>
Value<S> matmul(Value<S> a, Value<S> b) {
    const Tensor<S>& av = a.val();
    const Tensor<S>& bv = b.val();
    if (av.cols() != bv.rows())
        throw std::invalid_argument("matmul: inner dims " + av.shape_str() + " x " +
                                    bv.shape_str());
    Tensor<S> out({av.rows(), bv.cols()});
    out.mat().noalias() = av.mat() * bv.mat();
    return a.graph->make(std::move(out), {a.idx, b.idx},
                         [pa = a.idx, pb = b.idx, av, bv](Graph<S>& g,
                                                          typename Graph<S>::Node& n) {
                             auto gm = n.grad.mat();
                             if (detail::wants(g, pa))
                                 g.grad_buffer(pa).mat().noalias() += gm * bv.mat().transpose();
                             if (detail::wants(g, pb))
                                 g.grad_buffer(pb).mat().noalias() += av.mat().transpose() * gm;
                         });
}

template <class S>
Value<S> transpose(Value<S> a) {
    const Tensor<S>& av = a.val();
    Tensor<S> out({av.cols(), av.rows()});
    out.mat().noalias() = av.mat().transpose();
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             g.grad_buffer(pa).mat().noalias() += n.grad.mat().transpose();
                         });
}

template <class S>
Value<S> reshape(Value<S> a, std::vector<int> dims) {
    Tensor<S> out = a.val().clone().reshaped(std::move(dims));
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (std::int64_t i = 0; i < n.grad.size(); ++i) da[i] += n.grad[i];
                         });
}

template <class S>
Value<S> slice_rows(Value<S> a, int r0, int nrows) {
    const Tensor<S>& av = a.val();
    if (r0 < 0 || r0 + nrows > av.rows()) throw std::out_of_range("slice_rows: range");
    const int c = av.cols();
    Tensor<S> out({nrows, c});
    std::copy(av.data() + static_cast<std::int64_t>(r0) * c,
              av.data() + static_cast<std::int64_t>(r0 + nrows) * c, out.data());
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx, r0, c](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             S* dst = da.data() + static_cast<std::int64_t>(r0) * c;
                             for (std::int64_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
                         });
}

template <class S>
Value<S> row(Value<S> a, int r) {
    return slice_rows(a, r, 1);
}

template <class S>
Value<S> slice_cols(Value<S> a, int c0, int ncols) {
    const Tensor<S>& av = a.val();
    if (c0 < 0 || c0 + ncols > av.cols()) throw std::out_of_range("slice_cols: range");
    const int r = av.rows(), c = av.cols();
    Tensor<S> out({r, ncols});
    for (int i = 0; i < r; ++i)
        std::copy(av.data() + static_cast<std::int64_t>(i) * c + c0,
                  av.data() + static_cast<std::int64_t>(i) * c + c0 + ncols,
                  out.data() + static_cast<std::int64_t>(i) * ncols);
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx, c0, c, ncols](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             const int r2 = n.grad.rows();
                             for (int i = 0; i < r2; ++i)
                                 for (int j = 0; j < ncols; ++j)
                                     da[static_cast<std::int64_t>(i) * c + c0 + j] +=
                                         n.grad[static_cast<std::int64_t>(i) * ncols + j];
                         });
}

template <class S>
Value<S> concat_rows(const std::vector<Value<S>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: empty");
    const int c = xs[0].val().cols();
    int total = 0;
    for (const auto& x : xs) {
        if (x.val().cols() != c) throw std::invalid_argument("concat_rows: column mismatch");
        total += x.val().rows();
    }
    Tensor<S> out({total, c});
    std::vector<int> parents;
    std::vector<int> offsets;
    int r = 0;
    for (const auto& x : xs) {
        const Tensor<S>& v = x.val();
        std::copy(v.begin(), v.end(), out.data() + static_cast<std::int64_t>(r) * c);
        parents.push_back(x.idx);
        offsets.push_back(r);
        r += v.rows();
    }
    return xs[0].graph->make(std::move(out), parents,
                             [parents, offsets, c](Graph<S>& g, typename Graph<S>::Node& n) {
                                 for (std::size_t k = 0; k < parents.size(); ++k) {
                                     if (!detail::wants(g, parents[k])) continue;
                                     Tensor<S>& dp = g.grad_buffer(parents[k]);
                                     const S* src =
                                         n.grad.data() + static_cast<std::int64_t>(offsets[k]) * c;
                                     for (std::int64_t i = 0; i < dp.size(); ++i) dp[i] += src[i];
                                 }
                             });
}

template <class S>
Value<S> concat_cols(const std::vector<Value<S>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty");
    const int r = xs[0].val().rows();
    int total = 0;
    for (const auto& x : xs) {
        if (x.val().rows() != r) throw std::invalid_argument("concat_cols: row mismatch");
        total += x.val().cols();
    }
    Tensor<S> out({r, total});
    std::vector<int> parents, offsets, widths;
    int c0 = 0;
    for (const auto& x : xs) {
        const Tensor<S>& v = x.val();
        const int w = v.cols();
        for (int i = 0; i < r; ++i)
            std::copy(v.data() + static_cast<std::int64_t>(i) * w,
                      v.data() + static_cast<std::int64_t>(i + 1) * w,
                      out.data() + static_cast<std::int64_t>(i) * total + c0);
        parents.push_back(x.idx);
        offsets.push_back(c0);
        widths.push_back(w);
        c0 += w;
    }
    return xs[0].graph->make(
        std::move(out), parents,
        [parents, offsets, widths, total, r](Graph<S>& g, typename Graph<S>::Node& n) {
            for (std::size_t k = 0; k < parents.size(); ++k) {
                if (!detail::wants(g, parents[k])) continue;
                Tensor<S>& dp = g.grad_buffer(parents[k]);
                const int w = widths[k];
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < w; ++j)
                        dp[static_cast<std::int64_t>(i) * w + j] +=
                            n.grad[static_cast<std::int64_t>(i) * total + offsets[k] + j];
            }
        });
}

/// x[m,n] + b broadcast over rows; b is [1,n] or rank-1 [n].
template <class S>
Value<S> add_row_broadcast(Value<S> x, Value<S> b) {
    const Tensor<S>& xv = x.val();
    const Tensor<S>& bv = b.val();
    if (bv.size() != xv.cols()) throw std::invalid_argument("add_row_broadcast: width mismatch");
    Tensor<S> out = xv.clone();
    const int m = xv.rows(), n = xv.cols();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::int64_t>(i) * n + j] += bv[j];
    return x.graph->make(std::move(out), {x.idx, b.idx},
                         [px = x.idx, pb = b.idx, m, n](Graph<S>& g, typename Graph<S>::Node& nd) {
                             if (detail::wants(g, px)) {
                                 Tensor<S>& dx = g.grad_buffer(px);
                                 for (std::int64_t i = 0; i < nd.grad.size(); ++i)
                                     dx[i] += nd.grad[i];
                             }
                             if (detail::wants(g, pb)) {
                                 Tensor<S>& db = g.grad_buffer(pb);
                                 for (int i = 0; i < m; ++i)
                                     for (int j = 0; j < n; ++j)
                                         db[j] += nd.grad[static_cast<std::int64_t>(i) * n + j];
                             }
                         });
}

/// x[m,n] * b broadcast over rows; b is [1,n] or rank-1 [n].
template <class S>
Value<S> mul_row_broadcast(Value<S> x, Value<S> b) {
    const Tensor<S>& xv = x.val();
    const Tensor<S>& bv = b.val();
    if (bv.size() != xv.cols()) throw std::invalid_argument("mul_row_broadcast: width mismatch");
    Tensor<S> out = xv.clone();
    const int m = xv.rows(), n = xv.cols();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::int64_t>(i) * n + j] *= bv[j];
    return x.graph->make(
        std::move(out), {x.idx, b.idx},
        [px = x.idx, pb = b.idx, xv, bv, m, n](Graph<S>& g, typename Graph<S>::Node& nd) {
            if (detail::wants(g, px)) {
                Tensor<S>& dx = g.grad_buffer(px);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        dx[static_cast<std::int64_t>(i) * n + j] +=
                            nd.grad[static_cast<std::int64_t>(i) * n + j] * bv[j];
            }
            if (detail::wants(g, pb)) {
                Tensor<S>& db = g.grad_buffer(pb);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j)
                        db[j] += nd.grad[static_cast<std::int64_t>(i) * n + j] *
                                 xv[static_cast<std::int64_t>(i) * n + j];
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Value<S> sum(Value<S> a) {
    S s = 0;
    for (const auto& x : a.val()) s += x;
    return a.graph->make(Tensor<S>::scalar(s), {a.idx},
                         [pa = a.idx](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             const S gg = n.grad[0];
                             for (auto& x : da) x += gg;
                         });
}

template <class S>
Value<S> mean(Value<S> a) {
    const S inv = S(1) / static_cast<S>(a.val().size());
    S s = 0;
    for (const auto& x : a.val()) s += x;
    return a.graph->make(Tensor<S>::scalar(s * inv), {a.idx},
                         [pa = a.idx, inv](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             const S gg = n.grad[0] * inv;
                             for (auto& x : da) x += gg;
                         });
}

template <class S>
Value<S> mean_rows(Value<S> a) {
    const Tensor<S>& av = a.val();
    const int m = av.rows(), n = av.cols();
    Tensor<S> out({1, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j] += av[static_cast<std::int64_t>(i) * n + j];
    const S inv = S(1) / static_cast<S>(m);
    for (auto& x : out) x *= inv;
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx, m, n, inv](Graph<S>& g, typename Graph<S>::Node& nd) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (int i = 0; i < m; ++i)
                                 for (int j = 0; j < n; ++j)
                                     da[static_cast<std::int64_t>(i) * n + j] +=
                                         nd.grad[j] * inv;
                         });
}

/// a / s where s is a scalar node.
template <class S>
Value<S> div_by_scalar(Value<S> a, Value<S> s) {
    if (s.val().size() != 1) throw std::invalid_argument("div_by_scalar: divisor not scalar");
    const S sv = s.val()[0];
    Tensor<S> out = a.val().clone();
    for (auto& x : out) x /= sv;
    return a.graph->make(std::move(out), {a.idx, s.idx},
                         [pa = a.idx, ps = s.idx, av = a.val(), sv](Graph<S>& g,
                                                                    typename Graph<S>::Node& n) {
                             if (detail::wants(g, pa)) {
                                 Tensor<S>& da = g.grad_buffer(pa);
                                 for (std::int64_t i = 0; i < n.grad.size(); ++i)
                                     da[i] += n.grad[i] / sv;
                             }
                             if (detail::wants(g, ps)) {
                                 S acc = 0;
                                 for (std::int64_t i = 0; i < n.grad.size(); ++i)
                                     acc += n.grad[i] * av[i];
                                 g.grad_buffer(ps)[0] -= acc / (sv * sv);
                             }
                         });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

namespace detail {

template <class S, class F, class DF>
Value<S> unary(Value<S> a, F f, DF df) {
    Tensor<S> out = a.val().clone();
    for (auto& x : out) x = f(x);
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx, av = a.val(), df](Graph<S>& g, typename Graph<S>::Node& n) {
                             if (!wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (std::int64_t i = 0; i < n.grad.size(); ++i)
                                 da[i] += n.grad[i] * df(av[i], n.value[i]);
                         });
}

template <class S>
S stable_sigmoid(S x) {
    if (x >= 0) {
        const S e = std::exp(-x);
        return S(1) / (S(1) + e);
    }
    const S e = std::exp(x);
    return e / (S(1) + e);
}

template <class S>
S stable_softplus(S x) {
    // log(1 + e^x) without overflow.
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

} // namespace detail

template <class S>
Value<S> sigmoid(Value<S> a) {
    return detail::unary(
        a, [](S x) { return detail::stable_sigmoid(x); },
        [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Value<S> tanh_op(Value<S> a) {
    return detail::unary(
        a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
Value<S> exp_op(Value<S> a) {
    return detail::unary(
        a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
Value<S> log_op(Value<S> a) {
    return detail::unary(
        a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
Value<S> sqrt_op(Value<S> a) {
    return detail::unary(
        a, [](S x) { return std::sqrt(x); }, [](S, S y) { return S(0.5) / y; });
}

template <class S>
Value<S> softplus(Value<S> a) {
    return detail::unary(
        a, [](S x) { return detail::stable_softplus(x); },
        [](S x, S) { return detail::stable_sigmoid(x); });
}

template <class S>
Value<S> relu(Value<S> a) {
    return detail::unary(
        a, [](S x) { return x > 0 ? x : S(0); }, [](S x, S) { return x > 0 ? S(1) : S(0); });
}

/// Exact GELU, 0.5 x (1 + erf(x/sqrt 2)).
template <class S>
Value<S> gelu(Value<S> a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary(
        a, [&](S x) { return S(0.5) * x * (S(1) + S(std::erf(double(x) * inv_sqrt2))); },
        [&](S x, S) {
            const double cdf = 0.5 * (1.0 + std::erf(double(x) * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x));
            return S(cdf + double(x) * pdf);
        });
}

template <class S>
Value<S> square(Value<S> a) {
    return detail::unary(
        a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

/// x^p for constant p; domain x >= 0 when p is not a positive integer.
template <class S>
Value<S> pow_const(Value<S> a, S p) {
    return detail::unary(
        a, [p](S x) { return std::pow(x, p); },
        [p](S x, S y) { return x == S(0) ? S(0) : p * y / x; });
}

// ---------------------------------------------------------------------------
// Structured ops
// ---------------------------------------------------------------------------

/// Row-wise softmax restricted to `allowed` entries (uint8 [m,n]); disallowed
/// entries get exactly 0 and receive no gradient.
template <class S>
Value<S> masked_softmax_rows(Value<S> a, const Tensor<std::uint8_t>& allowed) {
    const Tensor<S>& av = a.val();
    if (allowed.rows() != av.rows() || allowed.cols() != av.cols())
        throw std::invalid_argument("masked_softmax_rows: mask shape mismatch");
    const int m = av.rows(), n = av.cols();
    Tensor<S> out({m, n});
    for (int i = 0; i < m; ++i) {
        const std::int64_t off = static_cast<std::int64_t>(i) * n;
        S mx = -std::numeric_limits<S>::infinity();
        for (int j = 0; j < n; ++j)
            if (allowed[off + j] && av[off + j] > mx) mx = av[off + j];
        if (mx == -std::numeric_limits<S>::infinity()) continue; // fully masked row -> zeros
        S z = 0;
        for (int j = 0; j < n; ++j)
            if (allowed[off + j]) {
                out[off + j] = std::exp(av[off + j] - mx);
                z += out[off + j];
            }
        for (int j = 0; j < n; ++j) out[off + j] /= z;
    }
    return a.graph->make(std::move(out), {a.idx},
                         [pa = a.idx, m, n](Graph<S>& g, typename Graph<S>::Node& nd) {
                             if (!detail::wants(g, pa)) return;
                             Tensor<S>& da = g.grad_buffer(pa);
                             for (int i = 0; i < m; ++i) {
                                 const std::int64_t off = static_cast<std::int64_t>(i) * n;
                                 S dot = 0;
                                 for (int j = 0; j < n; ++j)
                                     dot += nd.grad[off + j] * nd.value[off + j];
                                 for (int j = 0; j < n; ++j)
                                     da[off + j] +=
                                         nd.value[off + j] * (nd.grad[off + j] - dot);
                             }
                         });
}

/// Per-row layer norm with affine parameters gamma/beta of width n.
template <class S>
Value<S> layer_norm(Value<S> x, Value<S> gamma, Value<S> beta, S eps = S(1e-5)) {
    const Tensor<S>& xv = x.val();
    const int m = xv.rows(), n = xv.cols();
    if (gamma.val().size() != n || beta.val().size() != n)
        throw std::invalid_argument("layer_norm: affine width mismatch");
    Tensor<S> out({m, n});
    Tensor<S> xhat({m, n});
    Tensor<S> inv_sigma({m});
    const Tensor<S>& gv = gamma.val();
    const Tensor<S>& bv = beta.val();
    for (int i = 0; i < m; ++i) {
        const std::int64_t off = static_cast<std::int64_t>(i) * n;
        S mu = 0;
        for (int j = 0; j < n; ++j) mu += xv[off + j];
        mu /= static_cast<S>(n);
        S var = 0;
        for (int j = 0; j < n; ++j) {
            const S d = xv[off + j] - mu;
            var += d * d;
        }
        var /= static_cast<S>(n);
        const S is = S(1) / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (int j = 0; j < n; ++j) {
            xhat[off + j] = (xv[off + j] - mu) * is;
            out[off + j] = xhat[off + j] * gv[j] + bv[j];
        }
    }
    return x.graph->make(
        std::move(out), {x.idx, gamma.idx, beta.idx},
        [px = x.idx, pg = gamma.idx, pb = beta.idx, xhat, inv_sigma, gv, m,
         n](Graph<S>& g, typename Graph<S>::Node& nd) {
            for (int i = 0; i < m; ++i) {
                const std::int64_t off = static_cast<std::int64_t>(i) * n;
                if (detail::wants(g, px)) {
                    Tensor<S>& dx = g.grad_buffer(px);
                    S mean_gy = 0, mean_gyx = 0;
                    for (int j = 0; j < n; ++j) {
                        const S gy = nd.grad[off + j] * gv[j];
                        mean_gy += gy;
                        mean_gyx += gy * xhat[off + j];
                    }
                    mean_gy /= static_cast<S>(n);
                    mean_gyx /= static_cast<S>(n);
                    for (int j = 0; j < n; ++j) {
                        const S gy = nd.grad[off + j] * gv[j];
                        dx[off + j] +=
                            inv_sigma[i] * (gy - mean_gy - xhat[off + j] * mean_gyx);
                    }
                }
                if (detail::wants(g, pg)) {
                    Tensor<S>& dg = g.grad_buffer(pg);
                    for (int j = 0; j < n; ++j) dg[j] += nd.grad[off + j] * xhat[off + j];
                }
                if (detail::wants(g, pb)) {
                    Tensor<S>& db = g.grad_buffer(pb);
                    for (int j = 0; j < n; ++j) db[j] += nd.grad[off + j];
                }
            }
        });
}

/// Gather rows of an embedding table by constant indices.
template <class S>
Value<S> embedding(Value<S> table, std::vector<int> ids) {
    const Tensor<S>& tv = table.val();
    const int d = tv.cols();
    Tensor<S> out({static_cast<int>(ids.size()), d});
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (ids[k] < 0 || ids[k] >= tv.rows()) throw std::out_of_range("embedding: id");
        std::copy(tv.data() + static_cast<std::int64_t>(ids[k]) * d,
                  tv.data() + static_cast<std::int64_t>(ids[k] + 1) * d,
                  out.data() + static_cast<std::int64_t>(k) * d);
    }
    return table.graph->make(std::move(out), {table.idx},
                             [pt = table.idx, ids, d](Graph<S>& g, typename Graph<S>::Node& nd) {
                                 if (!detail::wants(g, pt)) return;
                                 Tensor<S>& dt = g.grad_buffer(pt);
                                 for (std::size_t k = 0; k < ids.size(); ++k)
                                     for (int j = 0; j < d; ++j)
                                         dt[static_cast<std::int64_t>(ids[k]) * d + j] +=
                                             nd.grad[static_cast<std::int64_t>(k) * d + j];
                             });
}

/// Value pass-through that blocks gradient flow.
template <class S>
Value<S> stop_gradient(Value<S> a) {
    return a.graph->input(a.val(), false);
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

/// x[m,k] * W[k,n] + b[n]
template <class S>
Value<S> linear(Value<S> x, Value<S> w, Value<S> b) {
    return add_row_broadcast(matmul(x, w), b);
}

/// Mean of squared differences against a constant target.
template <class S>
Value<S> mean_sq_diff(Value<S> a, const Tensor<S>& target) {
    return mean(square(sub_const(a, target)));
}

template <class S>
Value<S> sum_sq_diff(Value<S> a, const Tensor<S>& target) {
    return sum(square(sub_const(a, target)));
}

} // namespace palm::ad
