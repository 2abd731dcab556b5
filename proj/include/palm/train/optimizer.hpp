#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "palm/core/params.hpp"

namespace palm::train {

/// Adam with decoupled weight decay. Moment buffers are indexed in the
/// store's registration order and are checkpointable.
template <class S>
class AdamW {
public:
    explicit AdamW(ParamStore<S>& store, double beta1 = 0.9, double beta2 = 0.999,
                   double eps = 1e-8, double weight_decay = 1e-4)
        : store_(&store), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
        for (auto& e : store.entries()) {
            m_.emplace_back(e.value.dims());
            v_.emplace_back(e.value.dims());
        }
    }

    void step(double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        auto& entries = store_->entries();
        for (std::size_t k = 0; k < entries.size(); ++k) {
            Tensor<S>& p = entries[k].value;
            const Tensor<S>& g = entries[k].grad;
            Tensor<S>& m = m_[k];
            Tensor<S>& v = v_[k];
            for (std::int64_t i = 0; i < p.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * gi;
                const double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * gi * gi;
                m[i] = static_cast<S>(mi);
                v[i] = static_cast<S>(vi);
                const double update = (mi / c1) / (std::sqrt(vi / c2) + eps_) +
                                      wd_ * static_cast<double>(p[i]);
                p[i] = static_cast<S>(static_cast<double>(p[i]) - lr * update);
            }
        }
    }

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    std::vector<Tensor<S>>& first_moments() { return m_; }
    std::vector<Tensor<S>>& second_moments() { return v_; }

private:
    ParamStore<S>* store_;
    double beta1_, beta2_, eps_, wd_;
    std::int64_t t_ = 0;
    std::vector<Tensor<S>> m_, v_;
};

/// Cosine decay from `base` to 0 over `total` steps.
inline double cosine_lr(double base, std::int64_t step, std::int64_t total) {
    if (total <= 0) return base;
    const double u = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
    return base * 0.5 * (1.0 + std::cos(M_PI * u));
}

} // namespace palm::train
