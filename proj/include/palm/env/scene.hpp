#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "palm/env/png_io.hpp"

namespace palm::env {

struct Vec2 {
    double x = 0; // column, pixel units, origin top-left
    double y = 0; // row

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    double norm() const;
};

struct ColorSpec {
    std::string name;
    std::array<std::uint8_t, 3> rgb;
};

/// Closed color vocabulary; SceneConfig::palette selects a prefix/subset by name.
const std::vector<ColorSpec>& color_table();

enum class ObjectShape : int { Circle = 0, Square = 1, Triangle = 2, Diamond = 3 };
enum class ContainerShape : int { Bowl = 0, Box = 1 };

const char* shape_name(ObjectShape s);
const char* shape_name(ContainerShape s);

struct SceneConfig {
    int table_size = 64;     // square raster side in pixels
    int num_objects = 3;     // >= chain_length
    int num_containers = 3;  // >= chain_length
    int chain_length = 3;    // K subtasks
    std::vector<std::string> palette; // empty -> full color table
    std::uint64_t seed = 0;

    void validate() const; // throws std::invalid_argument on bad config

    // Geometry derived from the raster size.
    double object_radius() const { return std::max(2.0, table_size / 16.0); }
    double container_radius() const { return std::max(4.0, table_size / 8.0); }
    double grasp_radius() const { return object_radius() + 1.5; }
    double max_step() const { return std::max(2.0, table_size / 16.0); }
    double contain_radius() const {
        return std::max(1.0, container_radius() - object_radius());
    }
    int expert_step_budget() const { return 60 * chain_length; }
};

struct ObjectState {
    int color_id = 0;
    ObjectShape shape = ObjectShape::Circle;
    Vec2 pos;
    bool held = false;
    bool distractor = false;
};

struct ContainerState {
    int color_id = 0;
    ContainerShape shape = ContainerShape::Bowl;
    Vec2 pos;
};

struct Lighting {
    double gain = 1.0;
    std::array<double, 3> temp{1.0, 1.0, 1.0}; // per-channel multiplier
};

struct WorldState {
    std::vector<ContainerState> containers;
    std::vector<ObjectState> objects; // chain referents first, distractors appended
    Vec2 gripper;
    bool gripper_closed = false;
    int held_object = -1;   // index into objects, -1 if none
    int active_subtask = 0; // in [0, K]; == K means episode done
    int frame = 0;
    Lighting lighting;
};

struct Action {
    std::array<double, 6> delta{}; // only first two components used in 2-D
    int gripper = 0;               // 1 = close, 0 = open

    void validate(double max_step) const; // throws on out-of-range values
};

struct StepEvents {
    bool subtask_completed = false;
    bool episode_done = false;
};

/// Instance ids: containers 1..C, objects C+1.., gripper kGripperId, 0 = background.
constexpr std::uint8_t kGripperId = 255;

struct GroundTruth {
    std::vector<std::uint8_t> id_map;      // H*W owner ids (occlusion-aware)
    std::vector<int> instance_ids;         // all container/object ids present
    int referent_id = 0;                   // 0 when episode is done
    int target_container_id = 0;           // 0 when episode is done
    std::optional<std::array<int, 2>> contact;       // (col,row) pixel
    std::vector<std::array<int, 2>> placement_points; // (col,row) pixels
    std::vector<float> motion;             // H*W*2 (dx,dy) since previous frame
};

struct Observation {
    ImageU8 base_view; // H x W x 3
    ImageU8 hand_view; // H x W x 3, gripper-centered crop upscaled 2x
    std::array<double, 6> state_pose{}; // (x, y, 0, 0, 0, 0)
    int state_gripper = 0;
    std::string instruction;
    GroundTruth ground_truth;
};

/// Deterministic closed vocabulary for the instruction grammar, sorted with
/// structural words first, then colors, then shapes.
std::vector<std::string> build_vocabulary();

/// Tokenizes an instruction into vocabulary ids; throws std::out_of_range on
/// unknown words.
std::vector<int> tokenize(const std::string& text, const std::vector<std::string>& vocab);

} // namespace palm::env
