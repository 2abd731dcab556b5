#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "palm/env/sim.hpp"

namespace palm::env {

/// One recorded timestep: observation content plus ground-truth annotations.
struct FrameRecord {
    ImageU8 base;
    ImageU8 hand;
    std::vector<std::uint8_t> id_map;
    std::array<double, 7> state{}; // pose(6) + gripper flag
    int subtask = 0;               // partition index: completion frames close their subtask
    int referent_id = 0;
    int target_container_id = 0;
    std::optional<std::array<int, 2>> contact;
    std::vector<std::array<int, 2>> placement_points;
    std::map<int, std::array<double, 2>> entity_poses; // id -> (x, y)
    std::array<double, 2> gripper_pos{};
    bool gripper_closed = false;
};

/// One expert episode with per-step annotations and subtask boundaries.
struct EpisodeRecord {
    std::uint64_t episode_seed = 0;
    std::uint64_t config_seed = 0;
    int table_size = 64;
    int chain_length = 0;
    int num_objects = 0;
    int num_containers = 0;
    std::string instruction;
    std::vector<FrameRecord> frames;
    std::vector<std::array<double, 7>> actions; // actions[t] moves frame t -> t+1
    std::vector<int> subtask_ends;              // completion frame per subtask, ascending
    bool completed = false;

    int length() const { return static_cast<int>(frames.size()); }
    std::vector<int> subtask_starts() const;
    /// Partition index of frame t (derived from subtask_ends).
    int subtask_of(int t) const;
    SceneConfig scene_config() const;
};

/// Rolls the scripted expert until done or the step budget is exhausted.
EpisodeRecord record_expert_episode(Simulator& sim, std::uint64_t episode_seed,
                                    const std::vector<Perturbation>& perturbations = {});

void save_episode(const EpisodeRecord& ep, const std::string& dir);
EpisodeRecord load_episode(const std::string& dir);

struct DatasetManifest {
    struct Entry {
        std::string dir;
        std::uint64_t seed = 0;
        int length = 0;
        int k = 0;
    };
    std::vector<Entry> episodes;
    std::vector<std::uint64_t> discarded_seeds;
    SceneConfig config;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

/// Runs the expert for n_episodes, serializes episode directories plus
/// manifest.json and vocab.json; over-budget episodes are discarded and
/// logged in the manifest.
DatasetManifest generate_dataset(const SceneConfig& cfg, int n_episodes,
                                 const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dataset_dir);

/// Loads every episode listed in a manifest into memory.
std::vector<EpisodeRecord> load_dataset(const std::string& dataset_dir);

} // namespace palm::env
