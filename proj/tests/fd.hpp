#pragma once

// Central finite-difference gradient checking used across the test suites.
// Deliberately independent of the backward implementations it verifies: the
// function under test is re-evaluated from scratch at perturbed inputs.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "palm/core/ops.hpp"
#include "palm/core/params.hpp"
#include "palm/core/rng.hpp"

namespace palm::test {

using DTensor = palm::Tensor<double>;
using DGraph = palm::ad::Graph<double>;
using DValue = palm::ad::Value<double>;

// fn receives a fresh graph plus leafed inputs and must return a scalar.
using ScalarFn = std::function<DValue(DGraph&, std::vector<DValue>&)>;

struct FdReport {
    double max_rel_err = 0.0;
    std::string where;
    bool ok(double tol) const { return max_rel_err <= tol; }
};

inline double eval_at(const ScalarFn& fn, const std::vector<DTensor>& inputs) {
    DGraph g;
    std::vector<DValue> leafs;
    leafs.reserve(inputs.size());
    for (const auto& t : inputs) leafs.push_back(g.input(t.clone(), true));
    return fn(g, leafs).item();
}

/// Compares reverse-mode gradients of `fn` w.r.t. every element of every
/// input against central differences.
inline FdReport fd_check(const ScalarFn& fn, std::vector<DTensor> inputs, double h = 1e-5) {
    DGraph g;
    std::vector<DValue> leafs;
    for (const auto& t : inputs) leafs.push_back(g.input(t.clone(), true));
    DValue out = fn(g, leafs);
    g.backward(out);

    FdReport rep;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const DTensor& grad = g.grad(leafs[k]);
        for (std::int64_t i = 0; i < inputs[k].size(); ++i) {
            const double saved = inputs[k][i];
            inputs[k][i] = saved + h;
            const double fp = eval_at(fn, inputs);
            inputs[k][i] = saved - h;
            const double fm = eval_at(fn, inputs);
            inputs[k][i] = saved;
            const double num = (fp - fm) / (2 * h);
            const double ana = grad[i];
            const double denom = std::max({1.0, std::abs(num), std::abs(ana)});
            const double rel = std::abs(num - ana) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.where = "input " + std::to_string(k) + " elem " + std::to_string(i);
            }
        }
    }
    return rep;
}

inline DTensor random_tensor(std::vector<int> dims, palm::Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
    DTensor t(std::move(dims));
    for (auto& x : t) x = rng.uniform(lo, hi);
    return t;
}

/// Central finite differences over randomly probed parameter coordinates of
/// a ParamStore-backed model. `make_loss` must build a fresh graph and
/// return the scalar loss for the current parameter values.
template <class MakeLoss>
FdReport param_fd_check(palm::ParamStore<double>& store, MakeLoss&& make_loss, int probes,
                        palm::Rng& rng, double h = 1e-5) {
    auto eval = [&]() -> double {
        DGraph g;
        palm::ParamUse<double> use(g, store);
        DValue loss = make_loss(g, use);
        return loss.item();
    };

    store.zero_grad();
    {
        DGraph g;
        palm::ParamUse<double> use(g, store);
        DValue loss = make_loss(g, use);
        g.backward(loss);
        use.harvest();
    }

    FdReport rep;
    const int n_params = static_cast<int>(store.count());
    for (int k = 0; k < probes; ++k) {
        const int pid = rng.uniform_index(n_params);
        auto& entry = store.entry(pid);
        const std::int64_t i =
            static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(entry.value.size())));
        const double saved = entry.value[i];
        entry.value[i] = saved + h;
        const double fp = eval();
        entry.value[i] = saved - h;
        const double fm = eval();
        entry.value[i] = saved;
        const double num = (fp - fm) / (2 * h);
        const double ana = entry.grad[i];
        const double denom = std::max({1.0, std::abs(num), std::abs(ana)});
        const double rel = std::abs(num - ana) / denom;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.where = entry.name + "[" + std::to_string(i) + "]";
        }
    }
    return rep;
}

/// Overwrites every parameter with small random values (useful where
/// zero-initialized modulations would otherwise hide a conditioning path).
inline void randomize_params(palm::ParamStore<double>& store, palm::Rng& rng,
                             double scale = 0.05) {
    for (auto& e : store.entries())
        for (auto& v : e.value) v = rng.normal(0.0, scale);
}

} // namespace palm::test
