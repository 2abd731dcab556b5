#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "palm/core/ops.hpp"
#include "palm/core/rng.hpp"
#include "palm/core/tensor.hpp"

namespace palm {

enum class Init { Zeros, Ones, Normal002, Xavier };

/// Named parameter tensors plus their gradient accumulators. Initialization
/// is keyed by (seed, name) so parameter values do not depend on creation
/// order.
template <class S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<S> value;
        Tensor<S> grad;
    };

    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    int add(const std::string& name, std::vector<int> dims, Init init) {
        if (index_.count(name)) throw std::logic_error("param already registered: " + name);
        Entry e;
        e.name = name;
        e.value = Tensor<S>(dims);
        e.grad = Tensor<S>(dims);
        initialize(e.value, dims, init, Rng(Rng::mix(seed_, Rng::hash(name))));
        entries_.push_back(std::move(e));
        const int id = static_cast<int>(entries_.size()) - 1;
        index_[name] = id;
        return id;
    }

    Entry& entry(int id) { return entries_.at(static_cast<std::size_t>(id)); }
    const Entry& entry(int id) const { return entries_.at(static_cast<std::size_t>(id)); }

    int id(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown param: " + name);
        return it->second;
    }

    Tensor<S>& value(int id) { return entry(id).value; }
    Tensor<S>& grad(int id) { return entry(id).grad; }

    std::size_t count() const { return entries_.size(); }
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

    std::int64_t scalar_count() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.grad.zero();
    }

    /// Global-norm gradient clipping; returns the pre-clip norm.
    double clip_grad_norm(double max_norm) {
        double sq = 0;
        for (auto& e : entries_)
            for (const auto& g : e.grad) sq += double(g) * double(g);
        const double norm = std::sqrt(sq);
        if (norm > max_norm && norm > 0) {
            const S f = static_cast<S>(max_norm / norm);
            for (auto& e : entries_)
                for (auto& g : e.grad) g *= f;
        }
        return norm;
    }

private:
    static void initialize(Tensor<S>& t, const std::vector<int>& dims, Init init, Rng rng) {
        switch (init) {
        case Init::Zeros:
            break;
        case Init::Ones:
            t.fill(S(1));
            break;
        case Init::Normal002:
            for (auto& x : t) x = static_cast<S>(rng.normal(0.0, 0.02));
            break;
        case Init::Xavier: {
            const int fan_in = dims.size() >= 2 ? dims[0] : static_cast<int>(t.size());
            const int fan_out = dims.size() >= 2 ? dims[1] : static_cast<int>(t.size());
            const double std = std::sqrt(2.0 / (fan_in + fan_out));
            for (auto& x : t) x = static_cast<S>(rng.normal(0.0, std));
            break;
        }
        }
    }

    std::uint64_t seed_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

/// Per-graph view of a ParamStore: leafs each parameter at most once and
/// harvests leaf gradients back into the store after backward().
template <class S>
class ParamUse {
public:
    /// trainable=false leafs parameters as constants (inference mode: the
    /// graph skips all gradient bookkeeping).
    ParamUse(ad::Graph<S>& g, ParamStore<S>& store, bool trainable = true)
        : g_(&g), store_(&store), trainable_(trainable) {}

    ad::Value<S> operator()(int id) {
        auto it = memo_.find(id);
        if (it != memo_.end()) return it->second;
        ad::Value<S> v = trainable_ ? g_->param(store_->value(id))
                                    : g_->input(store_->value(id), false);
        memo_.emplace(id, v);
        return v;
    }

    /// Adds `scale` times each leaf gradient into the store accumulators.
    void harvest(S scale = S(1)) {
        for (auto& [id, v] : memo_) {
            auto& node = g_->node(v.idx);
            if (!node.grad.defined()) continue;
            Tensor<S>& acc = store_->grad(id);
            for (std::int64_t i = 0; i < acc.size(); ++i) acc[i] += scale * node.grad[i];
        }
    }

    ad::Graph<S>& graph() { return *g_; }

private:
    ad::Graph<S>* g_;
    ParamStore<S>* store_;
    bool trainable_;
    std::unordered_map<int, ad::Value<S>> memo_;
};

} // namespace palm
