#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace palm::eval {

struct SwitchEvent {
    int step = 0;
    int from = 0;
    int to = 0;
};

/// Threshold controller over the predicted progress signal. A switch fires
/// on the first crossing of phi and then latches; the controller re-arms
/// only after the signal falls below `rearm`, so oscillation around phi
/// cannot double-switch.
class ProgressController {
public:
    ProgressController(double phi, int max_stage, double rearm = 0.5)
        : phi_(phi), rearm_(rearm), max_stage_(max_stage) {
        if (phi <= 0.0 || phi > 1.0)
            throw std::invalid_argument("controller: phi must lie in (0, 1]");
    }

    /// Feeds one predicted progress value; returns true when a switch fired.
    bool update(double p_hat, int step) {
        if (!armed_) {
            if (p_hat < rearm_) armed_ = true;
            return false;
        }
        if (p_hat >= phi_ && stage_ < max_stage_) {
            log_.push_back({step, stage_, stage_ + 1});
            ++stage_;
            armed_ = false;
            return true;
        }
        return false;
    }

    int stage() const { return stage_; }
    double phi() const { return phi_; }
    const std::vector<SwitchEvent>& switch_log() const { return log_; }

private:
    double phi_;
    double rearm_;
    int max_stage_;
    int stage_ = 0;
    bool armed_ = true;
    std::vector<SwitchEvent> log_;
};

struct ProbeResult {
    double premature_rate = 0.0;  // switched strictly before true completion
    double stagnation_rate = 0.0; // never switched within the subtask
    int subtasks = 0;
};

/// Synthetic controller probe: linear oracle progress ramps with additive
/// Gaussian noise, clamped to [0,1]. A switch at the final ramp step counts
/// as on-time; none at all counts as stagnation.
ProbeResult controller_probe(double phi, int n_subtasks, double noise_sigma,
                             std::uint64_t seed);

} // namespace palm::eval
