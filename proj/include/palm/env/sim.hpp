#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "palm/core/rng.hpp"
#include "palm/env/scene.hpp"

namespace palm::env {

enum class PerturbationKind { Relocation, Lighting, Distraction };

PerturbationKind parse_perturbation(const std::string& name); // throws on unknown kind

struct Perturbation {
    PerturbationKind kind = PerturbationKind::Relocation;
    int at_step = 0;
    std::optional<double> lighting_gain; // sampled when unset
    int distractor_count = 3;
};

/// Rendering of one frame: RGB raster plus the occlusion-aware owner-id map.
struct RenderResult {
    ImageU8 frame;
    std::vector<std::uint8_t> id_map;
};

RenderResult render_scene(const SceneConfig& cfg, const WorldState& world);
ImageU8 render_hand_view(const ImageU8& base, const SceneConfig& cfg, Vec2 gripper,
                         const Lighting& lighting);
/// Footprint of the gripper sprite alone (used to rebuild id maps from disk).
std::vector<std::uint8_t> gripper_footprint(const SceneConfig& cfg, Vec2 pos, bool closed);

/// Deterministic, seedable 2-D tabletop of K chained pick-and-place subtasks.
/// Object/container identities (and hence the instruction) are fixed by the
/// config seed; reset(seed) re-randomizes poses only.
class Simulator {
public:
    explicit Simulator(SceneConfig cfg);

    Observation reset(std::uint64_t episode_seed);

    /// Kinematic update; throws std::logic_error on step-after-done.
    std::pair<Observation, StepEvents> step(const Action& a);

    /// Same update without rendering (observation skipped).
    StepEvents step_events(const Action& a);

    Observation observe() const;

    /// Proportional-controller expert toward the current phase target.
    Action expert_action() const;

    /// Queues a perturbation to fire when the frame counter reaches at_step.
    void schedule_perturbation(const Perturbation& p);

    /// Applies a perturbation immediately.
    void apply_perturbation(const Perturbation& p);

    const SceneConfig& config() const { return cfg_; }
    const WorldState& world() const { return world_; }
    const std::string& instruction() const { return instruction_; }
    bool done() const { return world_.active_subtask >= cfg_.chain_length; }
    int frame() const { return world_.frame; }
    int completed_subtasks() const { return world_.active_subtask; }

    int container_id(int index) const { return 1 + index; }
    int object_id(int index) const { return 1 + static_cast<int>(world_.containers.size()) + index; }

    /// Ground-truth placement sample: uniform over the container's visible
    /// mask at the current frame.
    std::vector<std::array<int, 2>> sample_placement_points(int count, Rng& rng,
                                                            const std::vector<std::uint8_t>& id_map,
                                                            int container_index) const;

private:
    void apply_motion(const Action& a);
    StepEvents update_events();
    GroundTruth ground_truth(const std::vector<std::uint8_t>& id_map,
                             const WorldState& prev_world) const;
    std::optional<std::array<int, 2>> contact_point() const;
    Vec2 sample_free_pose(Rng& rng, double radius, double min_sep,
                          const std::vector<Vec2>& taken, const std::vector<double>& taken_r,
                          int max_tries = 4096) const;

    SceneConfig cfg_;
    WorldState world_;
    std::string instruction_;
    Rng perturb_rng_;
    Rng placement_rng_;
    std::vector<Perturbation> pending_;
    bool initialized_ = false;
    WorldState prev_world_; // for the per-pixel motion field
};

} // namespace palm::env
