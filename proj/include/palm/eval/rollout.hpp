#pragma once

#include <deque>
#include <string>
#include <vector>

#include "palm/eval/metrics.hpp"
#include "palm/model/policy.hpp"

namespace palm::eval {

struct RolloutConfig {
    double phi = 0.9;
    int sample_steps = 10;
    int max_steps = 0; // 0 -> 2x the expert budget
    std::uint64_t noise_seed = 0;
};

/// Closed-loop execution: observe, fuse the 7-step history, sample a chunk,
/// execute it action by action while the predicted progress drives the
/// subtask controller. Per-frame encoder outputs are cached since weights
/// are frozen during evaluation.
template <class S>
EpisodeResult rollout(model::PalmModel<S>& policy, env::Simulator& sim,
                      std::uint64_t episode_seed, const RolloutConfig& rc,
                      const std::vector<env::Perturbation>& injections = {}) {
    const auto& mc = policy.config();
    const int k = sim.config().chain_length;
    const int history = mc.history_length;
    const int max_steps =
        rc.max_steps > 0 ? rc.max_steps : 2 * sim.config().expert_step_budget();

    env::Observation obs = sim.reset(episode_seed);
    for (const auto& p : injections) sim.schedule_perturbation(p);
    const std::vector<int> ids = env::tokenize(sim.instruction(), policy.vocab());

    std::deque<model::EncodedFrame<S>> cache;
    cache.push_back(policy.encode_frame_inference(policy.frame_from_observation(obs)));

    ProgressController controller(rc.phi, k);
    Rng noise_rng(Rng::mix(rc.noise_seed, Rng::mix(episode_seed, 0x5A3D1E)));

    EpisodeResult result;
    result.chain_length = k;
    for (const auto& p : injections) result.injection_steps.push_back(p.at_step);

    int step = 0;
    while (!sim.done() && step < max_steps) {
        std::vector<const model::EncodedFrame<S>*> frames;
        for (int h = history - 1; h >= 0; --h) {
            const int idx = std::max(0, static_cast<int>(cache.size()) - 1 - h);
            frames.push_back(&cache[static_cast<std::size_t>(idx)]);
        }
        const int stage_in = std::min(controller.stage(), k - 1);
        auto chunk = policy.sample_chunk_cached(frames, ids, stage_in, rc.sample_steps,
                                                noise_rng);
        for (std::size_t i = 0; i < chunk.deltas.size() && !sim.done() && step < max_steps;
             ++i) {
            env::Action a;
            a.delta = chunk.deltas[i];
            for (int j = 2; j < 6; ++j) a.delta[static_cast<std::size_t>(j)] = 0.0;
            a.gripper = chunk.gripper[i];
            auto [next_obs, ev] = sim.step(a);
            (void)ev;
            ++step;
            cache.push_back(policy.encode_frame_inference(policy.frame_from_observation(next_obs)));
            while (static_cast<int>(cache.size()) > history) cache.pop_front();
            if (!chunk.progress.empty()) {
                const double p_hat = chunk.progress[i];
                result.progress_trace.push_back(p_hat);
                controller.update(p_hat, step);
            }
        }
    }
    result.steps = step;
    result.completed = sim.completed_subtasks();
    result.switches = controller.switch_log();
    return result;
}

struct EvalRunConfig {
    int episodes = 100;
    double phi = 0.9;
    int sample_steps = 10;
    int max_steps = 0;
    std::string perturb;          // "", "relocation", "lighting", "distraction"
    int injections_per_episode = 2;
    std::uint64_t seed_base = 10000; // offsets eval episodes away from training seeds
};

/// Evaluates a policy over fresh episode seeds; with a perturbation kind set,
/// two seeded injections fire at random timesteps per episode.
template <class S>
EvalReport evaluate(model::PalmModel<S>& policy, const env::SceneConfig& scene,
                    const EvalRunConfig& ec) {
    env::Simulator sim(scene);
    std::vector<EpisodeResult> results;
    RolloutConfig rc;
    rc.phi = ec.phi;
    rc.sample_steps = ec.sample_steps;
    rc.max_steps = ec.max_steps;

    for (int i = 0; i < ec.episodes; ++i) {
        const std::uint64_t ep_seed = ec.seed_base + static_cast<std::uint64_t>(i);
        std::vector<env::Perturbation> injections;
        if (!ec.perturb.empty()) {
            const auto kind = env::parse_perturbation(ec.perturb);
            Rng r(Rng::mix(ep_seed, 0x1213EC7ULL));
            const int budget = sim.config().expert_step_budget();
            for (int j = 0; j < ec.injections_per_episode; ++j) {
                env::Perturbation p;
                p.kind = kind;
                p.at_step = 4 + r.uniform_index(std::max(2, budget / 2));
                injections.push_back(p);
            }
        }
        results.push_back(rollout(policy, sim, ep_seed, rc, injections));
    }
    EvalReport report = success_in_row_metrics(results, scene.chain_length);
    report.perturbation = ec.perturb;
    report.phi = ec.phi;
    return report;
}

template <class S>
std::vector<std::pair<double, EvalReport>> threshold_sweep(model::PalmModel<S>& policy,
                                                           const env::SceneConfig& scene,
                                                           EvalRunConfig ec,
                                                           const std::vector<double>& phis) {
    std::vector<std::pair<double, EvalReport>> rows;
    for (double phi : phis) {
        if (phi <= 0.0 || phi > 1.0)
            throw std::invalid_argument("threshold_sweep: phi must lie in (0, 1]");
        ec.phi = phi;
        rows.emplace_back(phi, evaluate(policy, scene, ec));
    }
    return rows;
}

} // namespace palm::eval
