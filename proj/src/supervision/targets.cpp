#include "palm/supervision/targets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "palm/core/rng.hpp"

namespace palm::supervision {

using env::EpisodeRecord;
using env::Vec2;

void SupervisionConfig::validate() const {
    if (future_offset < 1) throw std::invalid_argument("supervision: future_offset must be >= 1");
    if (history_offset < 1) throw std::invalid_argument("supervision: history_offset must be >= 1");
    if (grid_side < 2) throw std::invalid_argument("supervision: grid_side must be >= 2");
    if (displacement_threshold <= 0)
        throw std::invalid_argument("supervision: displacement_threshold must be > 0");
    if (heatmap_sigma <= 0) throw std::invalid_argument("supervision: heatmap_sigma must be > 0");
    if (predicted_candidates < 1)
        throw std::invalid_argument("supervision: predicted_candidates must be >= 1");
    if (norm_epsilon <= 0) throw std::invalid_argument("supervision: norm_epsilon must be > 0");
    if (history_length < 1) throw std::invalid_argument("supervision: history_length must be >= 1");
}

std::vector<std::vector<Vec2>> GroundTruthTracker::track(const EpisodeRecord& ep,
                                                         const std::vector<Vec2>& points,
                                                         int from, int to) const {
    if (from < 0 || to >= ep.length() || from > to)
        throw std::out_of_range("tracker: frame range out of episode");
    const int s = ep.table_size;
    const auto& start = ep.frames[static_cast<std::size_t>(from)];

    auto pose_of = [&](const env::FrameRecord& f, int id) -> Vec2 {
        if (id == env::kGripperId) return {f.gripper_pos[0], f.gripper_pos[1]};
        auto it = f.entity_poses.find(id);
        if (it == f.entity_poses.end()) return {0, 0}; // entity absent: treat as static
        return {it->second[0], it->second[1]};
    };

    std::vector<std::vector<Vec2>> paths(points.size());
    for (std::size_t k = 0; k < points.size(); ++k) {
        const Vec2 p0 = points[k];
        const int col = std::clamp(static_cast<int>(std::floor(p0.x)), 0, s - 1);
        const int row = std::clamp(static_cast<int>(std::floor(p0.y)), 0, s - 1);
        const int owner = start.id_map[static_cast<std::size_t>(row) * s + col];
        paths[k].reserve(static_cast<std::size_t>(to - from + 1));
        if (owner == 0) {
            for (int f = from; f <= to; ++f) paths[k].push_back(p0); // background is static
            continue;
        }
        const Vec2 anchor = pose_of(start, owner);
        for (int f = from; f <= to; ++f) {
            const bool present =
                owner == env::kGripperId ||
                ep.frames[static_cast<std::size_t>(f)].entity_poses.count(owner) > 0;
            const Vec2 pose = present ? pose_of(ep.frames[static_cast<std::size_t>(f)], owner)
                                      : anchor;
            paths[k].push_back(p0 + (pose - anchor));
        }
    }
    return paths;
}

Map extract_instance_mask(const EpisodeRecord& ep, int frame, int instance_id) {
    if (frame < 0 || frame >= ep.length())
        throw std::out_of_range("out-of-range: frame beyond episode end");
    const auto& ids = ep.frames[static_cast<std::size_t>(frame)].id_map;
    Map m(ids.size(), 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == static_cast<std::uint8_t>(instance_id)) m[i] = 1.0;
    return m;
}

Map global_mask_target(const EpisodeRecord& ep, int t, int n) {
    if (t + n >= ep.length()) throw std::out_of_range("out-of-range: t+n beyond episode end");
    const int referent = ep.frames[static_cast<std::size_t>(t)].referent_id;
    if (referent == 0) return Map(ep.frames[0].id_map.size(), 0.0);
    return extract_instance_mask(ep, t + n, referent);
}

GlobalTarget global_mask_target(const EpisodeRecord& ep, int t, int n, const PatchPoolFn& pool) {
    GlobalTarget out;
    out.mask = global_mask_target(ep, t, n);
    out.object_feature = pool(ep.frames[static_cast<std::size_t>(t + n)].base, out.mask);
    return out;
}

Map local_heatmap_target(const EpisodeRecord& ep, int t, int n, double sigma) {
    if (t + n >= ep.length()) throw std::out_of_range("out-of-range: t+n beyond episode end");
    const auto& f = ep.frames[static_cast<std::size_t>(t + n)];
    const int s = ep.table_size;
    Map m(static_cast<std::size_t>(s) * s, 0.0);
    if (!f.contact) return m;
    const double cu = (*f.contact)[0];
    const double cv = (*f.contact)[1];
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) {
            const double du = c - cu, dv = r - cv;
            m[static_cast<std::size_t>(r) * s + c] = std::exp(-(du * du + dv * dv) * inv);
        }
    return m;
}

Map normalize_map(const Map& map, double eps) {
    double sum = 0.0;
    for (double v : map) {
        if (v < 0) throw std::invalid_argument("negative-entries: normalize_map input");
        sum += v;
    }
    Map out(map.size());
    const double denom = sum + eps;
    for (std::size_t i = 0; i < map.size(); ++i) out[i] = map[i] / denom;
    return out;
}

std::vector<std::array<double, 2>> spatial_points_target(const EpisodeRecord& ep, int t, int n,
                                                         int count) {
    if (t + n >= ep.length()) throw std::out_of_range("out-of-range: t+n beyond episode end");
    const auto& now = ep.frames[static_cast<std::size_t>(t)];
    std::vector<std::array<double, 2>> out;
    if (now.target_container_id == 0) return out; // no placement semantics

    const auto& fut = ep.frames[static_cast<std::size_t>(t + n)];
    const int s = ep.table_size;
    std::vector<std::array<int, 2>> support;
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c)
            if (fut.id_map[static_cast<std::size_t>(r) * s + c] ==
                static_cast<std::uint8_t>(now.target_container_id))
                support.push_back({c, r});
    if (support.empty()) return out; // occluded container: empty set, not an error

    Rng rng(Rng::mix(ep.config_seed,
                     Rng::mix(ep.episode_seed, 0x5A71A1ULL + static_cast<std::uint64_t>(t))));
    for (int i = 0; i < count; ++i) {
        const auto& px = support[static_cast<std::size_t>(
            rng.uniform_index(static_cast<int>(support.size())))];
        out.push_back({(px[0] + 0.5) / s, (px[1] + 0.5) / s});
    }
    return out;
}

namespace {

DynamicTarget dynamic_target_over(const EpisodeRecord& ep, int from, int to,
                                  const SupervisionConfig& cfg, const PointTracker& tracker) {
    const int s = ep.table_size;
    const int n_grid = cfg.grid_side;

    std::vector<Vec2> grid;
    grid.reserve(static_cast<std::size_t>(n_grid) * n_grid);
    for (int gi = 0; gi < n_grid; ++gi)
        for (int gj = 0; gj < n_grid; ++gj)
            grid.push_back({(gj + 0.5) * s / n_grid, (gi + 0.5) * s / n_grid});

    const auto paths = tracker.track(ep, grid, from, to);

    DynamicTarget out;
    out.mask.assign(static_cast<std::size_t>(s) * s, 0.0);
    for (const auto& path : paths) {
        double length = 0.0;
        for (std::size_t f = 1; f < path.size(); ++f) length += (path[f] - path[f - 1]).norm();
        if (!(length > cfg.displacement_threshold)) continue;
        const Vec2 end = path.back();
        const int r0 = std::max(0, static_cast<int>(std::floor(end.y)) - cfg.disk_radius);
        const int r1 = std::min(s - 1, static_cast<int>(std::floor(end.y)) + cfg.disk_radius);
        const int c0 = std::max(0, static_cast<int>(std::floor(end.x)) - cfg.disk_radius);
        const int c1 = std::min(s - 1, static_cast<int>(std::floor(end.x)) + cfg.disk_radius);
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                const double dx = c + 0.5 - end.x, dy = r + 0.5 - end.y;
                if (dx * dx + dy * dy <= double(cfg.disk_radius) * cfg.disk_radius)
                    out.mask[static_cast<std::size_t>(r) * s + c] = 1.0;
            }
    }

    const auto& fut = ep.frames[static_cast<std::size_t>(to)].base;
    out.future_rgb.resize(fut.pixels.size());
    for (std::size_t i = 0; i < fut.pixels.size(); ++i)
        out.future_rgb[i] = static_cast<float>(fut.pixels[i]) / 255.0f;
    return out;
}

} // namespace

DynamicTarget dynamic_region_target(const EpisodeRecord& ep, int t, const SupervisionConfig& cfg,
                                    const PointTracker& tracker) {
    const int from = t - cfg.history_offset;
    const int to = t + cfg.future_offset;
    if (from < 0 || to >= ep.length())
        throw std::out_of_range("out-of-range: tracking window outside episode");
    return dynamic_target_over(ep, from, to, cfg, tracker);
}

std::vector<double> progress_labels(const EpisodeRecord& ep) {
    if (ep.subtask_ends.empty())
        throw std::invalid_argument("missing-boundaries: episode has no subtask ends");
    const auto starts = ep.subtask_starts();
    std::vector<double> p(static_cast<std::size_t>(ep.length()), 0.0);
    for (int t = 0; t < ep.length(); ++t) {
        if (t > ep.subtask_ends.back())
            throw std::invalid_argument("missing-boundaries: frame beyond final boundary");
        const int k = ep.subtask_of(t);
        const int b = starts[static_cast<std::size_t>(k)];
        const int e = ep.subtask_ends[static_cast<std::size_t>(k)];
        p[static_cast<std::size_t>(t)] = e == b ? 1.0 : double(t - b) / double(e - b);
    }
    return p;
}

std::vector<int> valid_sample_times(const EpisodeRecord& ep, const SupervisionConfig& cfg) {
    std::vector<int> ts;
    for (int t = 0; t + cfg.future_offset <= ep.length() - 1; ++t) ts.push_back(t);
    return ts;
}

TrainingSample build_sample(const EpisodeRecord& ep, int t, const SupervisionConfig& cfg,
                            const PointTracker& tracker) {
    cfg.validate();
    const int n = cfg.future_offset;
    if (t < 0 || t + n >= ep.length())
        throw std::invalid_argument("corrupt-episode: sample time outside valid range");
    if (static_cast<int>(ep.actions.size()) < t + n)
        throw std::invalid_argument("corrupt-episode: missing actions for chunk");

    TrainingSample s;
    s.episode = &ep;
    s.t = t;
    for (int h = cfg.history_length - 1; h >= 0; --h)
        s.history.push_back(std::max(0, t - h)); // edge steps repeat frame 0
    s.stage = ep.frames[static_cast<std::size_t>(t)].subtask;

    s.targets.global_mask = global_mask_target(ep, t, n);
    s.targets.local_heatmap = local_heatmap_target(ep, t, n, cfg.heatmap_sigma);
    s.targets.spatial_points = spatial_points_target(ep, t, n, cfg.target_points);

    // Tracking window start is clamped to frame 0; repeating the first frame
    // adds no displacement, so clamping is equivalent to front padding.
    DynamicTarget dyn = dynamic_target_over(ep, std::max(0, t - cfg.history_offset), t + n, cfg,
                                            tracker);
    s.targets.dynamic_mask = std::move(dyn.mask);
    s.targets.future_rgb = std::move(dyn.future_rgb);

    const auto labels = progress_labels(ep);
    s.targets.progress = labels[static_cast<std::size_t>(t)];
    for (int i = 0; i < n; ++i) {
        std::array<double, 8> row{};
        const auto& a = ep.actions[static_cast<std::size_t>(t + i)];
        for (int j = 0; j < 7; ++j) row[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(j)];
        row[7] = labels[static_cast<std::size_t>(t + i)];
        s.chunk.push_back(row);
    }
    return s;
}

} // namespace palm::supervision
