#include "palm/eval/controller.hpp"

#include <algorithm>

#include "palm/core/rng.hpp"

namespace palm::eval {

ProbeResult controller_probe(double phi, int n_subtasks, double noise_sigma,
                             std::uint64_t seed) {
    if (phi <= 0.0 || phi > 1.0)
        throw std::invalid_argument("controller_probe: phi must lie in (0, 1]");
    Rng rng(Rng::mix(seed, 0xC0117011ULL));
    int premature = 0, stagnated = 0;
    for (int i = 0; i < n_subtasks; ++i) {
        const int len = 10 + rng.uniform_index(21); // ramp length 10..30 steps
        ProgressController ctl(phi, 1);
        int switch_step = -1;
        for (int t = 0; t <= len; ++t) {
            const double p_true = static_cast<double>(t) / len;
            const double p_hat = std::clamp(p_true + rng.normal(0.0, noise_sigma), 0.0, 1.0);
            if (ctl.update(p_hat, t)) {
                switch_step = t;
                break;
            }
        }
        if (switch_step < 0)
            ++stagnated;
        else if (switch_step < len)
            ++premature; // before true completion at t == len
    }
    ProbeResult out;
    out.subtasks = n_subtasks;
    out.premature_rate = static_cast<double>(premature) / n_subtasks;
    out.stagnation_rate = static_cast<double>(stagnated) / n_subtasks;
    return out;
}

} // namespace palm::eval
