#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "palm/env/episode.hpp"

namespace palm::supervision {

struct SupervisionConfig {
    int future_offset = 3;              // prediction target lives at t + future_offset
    int history_offset = 6;             // tracking grid is planted at t - history_offset
    int grid_side = 16;                 // tracking grid is grid_side x grid_side
    double displacement_threshold = 2.0; // px of cumulative path length to count as moving
    double heatmap_sigma = 2.0;         // px
    int predicted_candidates = 8;       // M, size of the predicted placement set
    int target_points = 4;              // C, sampled placement targets
    double norm_epsilon = 1e-8;
    int disk_radius = 2;                // rasterization radius for dynamic points
    int history_length = 7;

    void validate() const;
};

/// Row-major H*W map in double precision.
using Map = std::vector<double>;

struct AffordanceTargets {
    Map global_mask;    // binary
    Map local_heatmap;  // Gaussian, peak 1 (or all zero)
    std::vector<std::array<double, 2>> spatial_points; // normalized (x, y) in [0,1]^2
    Map dynamic_mask;   // binary
    std::vector<float> future_rgb; // H*W*3 in [0,1], base view at t+n
    double progress = 0.0;
};

/// Pools an encoder feature over a mask; supplied by the caller so the
/// supervision stage stays free of model code.
using PatchPoolFn =
    std::function<std::vector<double>(const env::ImageU8& frame, const Map& mask)>;

struct GlobalTarget {
    Map mask;
    std::vector<double> object_feature;
};

/// Tracks query points through an episode; the default implementation walks
/// the simulator's exact per-entity motion, but anything matching this
/// interface can be plugged in.
class PointTracker {
public:
    virtual ~PointTracker() = default;
    /// Returns per-point positions for every frame in [from, to].
    virtual std::vector<std::vector<env::Vec2>> track(const env::EpisodeRecord& ep,
                                                      const std::vector<env::Vec2>& points,
                                                      int from, int to) const = 0;
};

class GroundTruthTracker final : public PointTracker {
public:
    std::vector<std::vector<env::Vec2>> track(const env::EpisodeRecord& ep,
                                              const std::vector<env::Vec2>& points, int from,
                                              int to) const override;
};

Map extract_instance_mask(const env::EpisodeRecord& ep, int frame, int instance_id);

Map global_mask_target(const env::EpisodeRecord& ep, int t, int n);
GlobalTarget global_mask_target(const env::EpisodeRecord& ep, int t, int n,
                                const PatchPoolFn& pool);

Map local_heatmap_target(const env::EpisodeRecord& ep, int t, int n, double sigma);

/// M / (sum(M) + eps); throws on negative entries.
Map normalize_map(const Map& map, double eps);

std::vector<std::array<double, 2>> spatial_points_target(const env::EpisodeRecord& ep, int t,
                                                         int n, int count);

struct DynamicTarget {
    Map mask;
    std::vector<float> future_rgb; // full frame; the mask picks the supervised support
};

DynamicTarget dynamic_region_target(const env::EpisodeRecord& ep, int t,
                                    const SupervisionConfig& cfg, const PointTracker& tracker);

std::vector<double> progress_labels(const env::EpisodeRecord& ep);

struct TrainingSample {
    const env::EpisodeRecord* episode = nullptr;
    int t = 0;
    std::vector<int> history; // history_length frame indices, front-padded with 0
    int stage = 0;            // active subtask partition at t
    AffordanceTargets targets;
    std::vector<std::array<double, 8>> chunk; // future_offset rows of action(7) + progress
};

TrainingSample build_sample(const env::EpisodeRecord& ep, int t, const SupervisionConfig& cfg,
                            const PointTracker& tracker);

/// All valid t values for an episode under cfg.
std::vector<int> valid_sample_times(const env::EpisodeRecord& ep, const SupervisionConfig& cfg);

} // namespace palm::supervision
