#include "palm/env/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace palm::env {

namespace {

constexpr double kPhaseTolerance = 0.8; // px, "close enough" for grasp/release

std::uint8_t scale_channel(std::uint8_t v, double f) {
    const double x = std::round(v * f);
    return static_cast<std::uint8_t>(std::clamp(x, 0.0, 255.0));
}

void apply_lighting(ImageU8& img, const Lighting& l) {
    if (l.gain == 1.0 && l.temp[0] == 1.0 && l.temp[1] == 1.0 && l.temp[2] == 1.0) return;
    for (std::size_t i = 0; i < img.pixels.size(); i += 3)
        for (int c = 0; c < 3; ++c)
            img.pixels[i + c] = scale_channel(img.pixels[i + c], l.gain * l.temp[c]);
}

struct Painter {
    ImageU8& img;
    std::vector<std::uint8_t>& ids;
    int size;

    void pixel(int row, int col, const std::array<std::uint8_t, 3>& rgb, std::uint8_t id) {
        if (row < 0 || col < 0 || row >= size || col >= size) return;
        const std::size_t p = static_cast<std::size_t>(row) * size + col;
        img.pixels[p * 3 + 0] = rgb[0];
        img.pixels[p * 3 + 1] = rgb[1];
        img.pixels[p * 3 + 2] = rgb[2];
        ids[p] = id;
    }

    template <class Pred>
    void region(Vec2 center, double extent, Pred inside,
                const std::array<std::uint8_t, 3>& rgb, std::uint8_t id) {
        const int r0 = std::max(0, static_cast<int>(std::floor(center.y - extent - 1)));
        const int r1 = std::min(size - 1, static_cast<int>(std::ceil(center.y + extent + 1)));
        const int c0 = std::max(0, static_cast<int>(std::floor(center.x - extent - 1)));
        const int c1 = std::min(size - 1, static_cast<int>(std::ceil(center.x + extent + 1)));
        for (int i = r0; i <= r1; ++i)
            for (int j = c0; j <= c1; ++j) {
                const double px = j + 0.5, py = i + 0.5;
                if (inside(px - center.x, py - center.y)) pixel(i, j, rgb, id);
            }
    }
};

std::array<std::uint8_t, 3> dim(const std::array<std::uint8_t, 3>& rgb, double f) {
    return {scale_channel(rgb[0], f), scale_channel(rgb[1], f), scale_channel(rgb[2], f)};
}

bool object_inside(ObjectShape s, double dx, double dy, double r) {
    switch (s) {
    case ObjectShape::Circle: return dx * dx + dy * dy <= r * r;
    case ObjectShape::Square: return std::abs(dx) <= r && std::abs(dy) <= r;
    case ObjectShape::Triangle:
        return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.6;
    case ObjectShape::Diamond: return std::abs(dx) + std::abs(dy) <= 1.25 * r;
    }
    return false;
}

void draw_container(Painter& p, const SceneConfig& cfg, const ContainerState& c,
                    std::uint8_t id) {
    const double r = cfg.container_radius();
    const auto& rgb = color_table()[static_cast<std::size_t>(c.color_id)].rgb;
    const auto interior = dim(rgb, 0.45);
    if (c.shape == ContainerShape::Bowl) {
        p.region(c.pos, r, [&](double dx, double dy) {
            const double d2 = dx * dx + dy * dy;
            return d2 <= r * r && d2 > (r - 1.3) * (r - 1.3);
        }, rgb, id);
        p.region(c.pos, r, [&](double dx, double dy) {
            return dx * dx + dy * dy <= (r - 1.3) * (r - 1.3);
        }, interior, id);
    } else {
        p.region(c.pos, r, [&](double dx, double dy) {
            const double m = std::max(std::abs(dx), std::abs(dy));
            return m <= r && m > r - 1.3;
        }, rgb, id);
        p.region(c.pos, r, [&](double dx, double dy) {
            return std::max(std::abs(dx), std::abs(dy)) <= r - 1.3;
        }, interior, id);
    }
}

void draw_gripper_sprite(Painter& p, const SceneConfig& cfg, Vec2 pos, bool closed) {
    const double arm = cfg.object_radius() + 1.5;
    // Arm half-width scales with the raster so a 16x16 tracking grid always
    // lands query points on the sprite.
    const double hw = std::max(1.0, cfg.table_size / 32.0);
    const std::array<std::uint8_t, 3> rgb = closed ? std::array<std::uint8_t, 3>{255, 255, 255}
                                                   : std::array<std::uint8_t, 3>{210, 210, 210};
    p.region(pos, arm, [&](double dx, double dy) {
        const bool horiz = std::abs(dy) <= hw && std::abs(dx) <= arm;
        const bool vert = std::abs(dx) <= hw && std::abs(dy) <= arm;
        return horiz || vert;
    }, rgb, kGripperId);
    if (closed)
        p.region(pos, hw + 1.0, [&](double dx, double dy) {
            return std::abs(dx) <= hw + 1.0 && std::abs(dy) <= hw + 1.0;
        }, rgb, kGripperId);
}

} // namespace

PerturbationKind parse_perturbation(const std::string& name) {
    if (name == "relocation") return PerturbationKind::Relocation;
    if (name == "lighting") return PerturbationKind::Lighting;
    if (name == "distraction") return PerturbationKind::Distraction;
    throw std::invalid_argument("unknown-kind: perturbation '" + name + "'");
}

RenderResult render_scene(const SceneConfig& cfg, const WorldState& world) {
    const int s = cfg.table_size;
    RenderResult out;
    out.frame.width = s;
    out.frame.height = s;
    out.frame.channels = 3;
    out.frame.pixels.assign(static_cast<std::size_t>(s) * s * 3, 0);
    out.id_map.assign(static_cast<std::size_t>(s) * s, 0);

    // Table background.
    for (std::size_t i = 0; i < out.frame.pixels.size(); i += 3) {
        out.frame.pixels[i + 0] = 66;
        out.frame.pixels[i + 1] = 66;
        out.frame.pixels[i + 2] = 72;
    }

    Painter p{out.frame, out.id_map, s};
    for (std::size_t i = 0; i < world.containers.size(); ++i)
        draw_container(p, cfg, world.containers[i], static_cast<std::uint8_t>(1 + i));
    const int base = 1 + static_cast<int>(world.containers.size());
    auto draw_object = [&](std::size_t i) {
        const auto& o = world.objects[i];
        const auto& rgb = color_table()[static_cast<std::size_t>(o.color_id)].rgb;
        const double r = cfg.object_radius();
        p.region(o.pos, 1.5 * r,
                 [&](double dx, double dy) { return object_inside(o.shape, dx, dy, r); }, rgb,
                 static_cast<std::uint8_t>(base + i));
    };
    for (std::size_t i = 0; i < world.objects.size(); ++i)
        if (!world.objects[i].held) draw_object(i);
    draw_gripper_sprite(p, cfg, world.gripper, world.gripper_closed);
    // A held object sits in the fingers, above the gripper sprite.
    for (std::size_t i = 0; i < world.objects.size(); ++i)
        if (world.objects[i].held) draw_object(i);

    apply_lighting(out.frame, world.lighting);
    return out;
}

ImageU8 render_hand_view(const ImageU8& base, const SceneConfig& cfg, Vec2 gripper,
                         const Lighting& lighting) {
    const int s = cfg.table_size;
    const int half = s / 4; // crop window = s/2, upscaled 2x back to s
    ImageU8 out;
    out.width = s;
    out.height = s;
    out.channels = 3;
    out.pixels.assign(static_cast<std::size_t>(s) * s * 3, 0);

    std::array<std::uint8_t, 3> bg = {scale_channel(66, lighting.gain * lighting.temp[0]),
                                      scale_channel(66, lighting.gain * lighting.temp[1]),
                                      scale_channel(72, lighting.gain * lighting.temp[2])};
    const int cr = static_cast<int>(std::floor(gripper.y));
    const int cc = static_cast<int>(std::floor(gripper.x));
    for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) {
            const int src_r = cr - half + i / 2;
            const int src_c = cc - half + j / 2;
            const std::size_t dst = (static_cast<std::size_t>(i) * s + j) * 3;
            if (src_r < 0 || src_c < 0 || src_r >= s || src_c >= s) {
                out.pixels[dst + 0] = bg[0];
                out.pixels[dst + 1] = bg[1];
                out.pixels[dst + 2] = bg[2];
            } else {
                const std::size_t src = (static_cast<std::size_t>(src_r) * s + src_c) * 3;
                out.pixels[dst + 0] = base.pixels[src + 0];
                out.pixels[dst + 1] = base.pixels[src + 1];
                out.pixels[dst + 2] = base.pixels[src + 2];
            }
        }
    return out;
}

std::vector<std::uint8_t> gripper_footprint(const SceneConfig& cfg, Vec2 pos, bool closed) {
    const int s = cfg.table_size;
    ImageU8 scratch;
    scratch.width = s;
    scratch.height = s;
    scratch.channels = 3;
    scratch.pixels.assign(static_cast<std::size_t>(s) * s * 3, 0);
    std::vector<std::uint8_t> ids(static_cast<std::size_t>(s) * s, 0);
    Painter p{scratch, ids, s};
    draw_gripper_sprite(p, cfg, pos, closed);
    return ids;
}

Simulator::Simulator(SceneConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();

    // Identities (colors/shapes) and the instruction come from the config
    // seed alone so that every reset shares one instruction.
    Rng id_rng(Rng::mix(cfg_.seed, 0xA11CEULL));
    std::vector<int> color_ids;
    for (std::size_t i = 0; i < color_table().size(); ++i) {
        bool in_palette = cfg_.palette.empty();
        for (const auto& name : cfg_.palette)
            if (name == color_table()[i].name) in_palette = true;
        if (in_palette) color_ids.push_back(static_cast<int>(i));
    }

    // Unique (color, shape) identities across all scene entities.
    std::vector<std::pair<int, int>> object_combos, container_combos;
    for (int c : color_ids) {
        for (int s = 0; s < 4; ++s) object_combos.emplace_back(c, s);
        for (int s = 0; s < 2; ++s) container_combos.emplace_back(c, s);
    }
    if (static_cast<int>(object_combos.size()) < cfg_.num_objects ||
        static_cast<int>(container_combos.size()) < cfg_.num_containers)
        throw std::invalid_argument("invalid-config: palette too small for requested entities");

    auto shuffle = [&](auto& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
            std::swap(v[static_cast<std::size_t>(i)],
                      v[static_cast<std::size_t>(id_rng.uniform_index(i + 1))]);
    };
    shuffle(object_combos);
    shuffle(container_combos);

    world_.containers.resize(static_cast<std::size_t>(cfg_.num_containers));
    for (int i = 0; i < cfg_.num_containers; ++i) {
        world_.containers[static_cast<std::size_t>(i)].color_id = container_combos[i].first;
        world_.containers[static_cast<std::size_t>(i)].shape =
            static_cast<ContainerShape>(container_combos[i].second);
    }
    world_.objects.resize(static_cast<std::size_t>(cfg_.num_objects));
    for (int i = 0; i < cfg_.num_objects; ++i) {
        world_.objects[static_cast<std::size_t>(i)].color_id = object_combos[i].first;
        world_.objects[static_cast<std::size_t>(i)].shape =
            static_cast<ObjectShape>(object_combos[i].second);
    }

    std::string text;
    for (int k = 0; k < cfg_.chain_length; ++k) {
        const auto& o = world_.objects[static_cast<std::size_t>(k)];
        const auto& c = world_.containers[static_cast<std::size_t>(k)];
        if (k == 0)
            text += "put the ";
        else
            text += " then the ";
        text += color_table()[static_cast<std::size_t>(o.color_id)].name;
        text += " ";
        text += shape_name(o.shape);
        text += " on the ";
        text += color_table()[static_cast<std::size_t>(c.color_id)].name;
        text += " ";
        text += shape_name(c.shape);
    }
    instruction_ = text;
}

Vec2 Simulator::sample_free_pose(Rng& rng, double radius, double min_sep,
                                 const std::vector<Vec2>& taken,
                                 const std::vector<double>& taken_r, int max_tries) const {
    const double margin = radius + 2.0;
    for (int t = 0; t < max_tries; ++t) {
        Vec2 p{rng.uniform(margin, cfg_.table_size - margin),
               rng.uniform(margin, cfg_.table_size - margin)};
        bool ok = true;
        for (std::size_t i = 0; i < taken.size(); ++i) {
            const double need = min_sep + radius + taken_r[i];
            if ((p - taken[i]).norm() < need) {
                ok = false;
                break;
            }
        }
        if (ok) return p;
    }
    throw std::invalid_argument("invalid-config: could not place entities without overlap");
}

Observation Simulator::reset(std::uint64_t episode_seed) {
    Rng rng(Rng::mix(cfg_.seed, Rng::mix(0x9E5EEDULL, episode_seed)));
    perturb_rng_ = rng.fork(0xBADBEEF);
    placement_rng_ = rng.fork(0x9ACE5);
    pending_.clear();

    // Trim distractors from any previous episode.
    world_.objects.erase(
        std::remove_if(world_.objects.begin(), world_.objects.end(),
                       [](const ObjectState& o) { return o.distractor; }),
        world_.objects.end());

    // Whole-layout retry: a dense scene can paint itself into a corner.
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
        try {
            std::vector<Vec2> taken;
            std::vector<double> taken_r;
            for (auto& c : world_.containers) {
                c.pos = sample_free_pose(rng, cfg_.container_radius(), 2.0, taken, taken_r);
                taken.push_back(c.pos);
                taken_r.push_back(cfg_.container_radius());
            }
            for (auto& o : world_.objects) {
                o.pos = sample_free_pose(rng, cfg_.object_radius(), 2.0, taken, taken_r);
                o.held = false;
                taken.push_back(o.pos);
                taken_r.push_back(cfg_.object_radius());
            }
            world_.gripper = sample_free_pose(rng, 1.0, 1.0, taken, taken_r);
            placed = true;
        } catch (const std::invalid_argument&) {
            continue;
        }
    }
    if (!placed)
        throw std::invalid_argument("invalid-config: could not place entities without overlap");
    world_.gripper_closed = false;
    world_.held_object = -1;
    world_.active_subtask = 0;
    world_.frame = 0;
    world_.lighting = Lighting{};

    initialized_ = true;
    prev_world_ = world_;
    return observe();
}

void Simulator::apply_motion(const Action& a) {
    const double ms = cfg_.max_step();
    const double dx = std::clamp(a.delta[0], -ms, ms);
    const double dy = std::clamp(a.delta[1], -ms, ms);
    world_.gripper.x = std::clamp(world_.gripper.x + dx, 0.0, cfg_.table_size - 1.0);
    world_.gripper.y = std::clamp(world_.gripper.y + dy, 0.0, cfg_.table_size - 1.0);
    if (world_.held_object >= 0)
        world_.objects[static_cast<std::size_t>(world_.held_object)].pos = world_.gripper;

    const bool close = a.gripper == 1;
    if (close && !world_.gripper_closed) {
        // Grasp the nearest free object within reach.
        int best = -1;
        double best_d = cfg_.grasp_radius();
        for (std::size_t i = 0; i < world_.objects.size(); ++i) {
            if (world_.objects[i].held) continue;
            const double d = (world_.objects[i].pos - world_.gripper).norm();
            if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0) {
            world_.held_object = best;
            world_.objects[static_cast<std::size_t>(best)].held = true;
            world_.objects[static_cast<std::size_t>(best)].pos = world_.gripper;
        }
    } else if (!close && world_.gripper_closed) {
        if (world_.held_object >= 0) {
            world_.objects[static_cast<std::size_t>(world_.held_object)].held = false;
            world_.held_object = -1;
        }
    }
    world_.gripper_closed = close;
}

StepEvents Simulator::update_events() {
    StepEvents ev;
    // Advance over every leading subtask whose referent is already resting
    // inside its target container (handles out-of-order deposits).
    while (world_.active_subtask < cfg_.chain_length) {
        const auto& obj = world_.objects[static_cast<std::size_t>(world_.active_subtask)];
        const auto& cont = world_.containers[static_cast<std::size_t>(world_.active_subtask)];
        if (!obj.held && (obj.pos - cont.pos).norm() <= cfg_.contain_radius()) {
            world_.active_subtask += 1;
            ev.subtask_completed = true;
        } else {
            break;
        }
    }
    ev.episode_done = done();
    return ev;
}

StepEvents Simulator::step_events(const Action& a) {
    if (!initialized_) throw std::logic_error("step: reset() must be called first");
    if (done()) throw std::logic_error("step-after-done");
    a.validate(cfg_.max_step());

    prev_world_ = world_;
    apply_motion(a);
    world_.frame += 1;

    for (auto it = pending_.begin(); it != pending_.end();) {
        if (it->at_step == world_.frame) {
            apply_perturbation(*it);
            it = pending_.erase(it);
        } else {
            ++it;
        }
    }
    return update_events();
}

std::pair<Observation, StepEvents> Simulator::step(const Action& a) {
    StepEvents ev = step_events(a);
    return {observe(), ev};
}

std::optional<std::array<int, 2>> Simulator::contact_point() const {
    if (done()) return std::nullopt;
    const int k = world_.active_subtask;
    const auto& obj = world_.objects[static_cast<std::size_t>(k)];
    Vec2 p;
    if (!obj.held) {
        p = obj.pos; // grasp point during the pick phase
    } else {
        const auto& cont = world_.containers[static_cast<std::size_t>(k)];
        p = {cont.pos.x, cont.pos.y - cfg_.container_radius() + 1.0}; // rim point
    }
    const int col = std::clamp(static_cast<int>(std::floor(p.x)), 0, cfg_.table_size - 1);
    const int row = std::clamp(static_cast<int>(std::floor(p.y)), 0, cfg_.table_size - 1);
    return std::array<int, 2>{col, row};
}

std::vector<std::array<int, 2>> Simulator::sample_placement_points(
    int count, Rng& rng, const std::vector<std::uint8_t>& id_map, int container_index) const {
    std::vector<std::array<int, 2>> support;
    const std::uint8_t want = static_cast<std::uint8_t>(1 + container_index);
    const int s = cfg_.table_size;
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c)
            if (id_map[static_cast<std::size_t>(r) * s + c] == want) support.push_back({c, r});
    std::vector<std::array<int, 2>> out;
    if (support.empty()) return out;
    for (int i = 0; i < count; ++i)
        out.push_back(support[static_cast<std::size_t>(rng.uniform_index(
            static_cast<int>(support.size())))]);
    return out;
}

GroundTruth Simulator::ground_truth(const std::vector<std::uint8_t>& id_map,
                                    const WorldState& prev_world) const {
    const std::vector<std::uint8_t> prev_id_map =
        world_.frame == 0 ? id_map : render_scene(cfg_, prev_world).id_map;
    GroundTruth gt;
    gt.id_map = id_map;
    for (std::size_t i = 0; i < world_.containers.size(); ++i)
        gt.instance_ids.push_back(1 + static_cast<int>(i));
    for (std::size_t i = 0; i < world_.objects.size(); ++i)
        gt.instance_ids.push_back(1 + static_cast<int>(world_.containers.size()) +
                                  static_cast<int>(i));
    if (!done()) {
        gt.referent_id = object_id(world_.active_subtask);
        gt.target_container_id = container_id(world_.active_subtask);
    }
    gt.contact = contact_point();
    if (!done()) {
        Rng r = placement_rng_.fork(static_cast<std::uint64_t>(world_.frame));
        gt.placement_points = sample_placement_points(4, r, id_map, world_.active_subtask);
    }

    // Per-pixel displacement of the owner of each previous-frame pixel.
    const int s = cfg_.table_size;
    gt.motion.assign(static_cast<std::size_t>(s) * s * 2, 0.0f);
    auto entity_delta = [&](std::uint8_t id) -> Vec2 {
        if (id == 0) return {0, 0};
        if (id == kGripperId) return world_.gripper - prev_world.gripper;
        const int nc = static_cast<int>(world_.containers.size());
        if (id <= nc) return {0, 0};
        const int oi = id - nc - 1;
        if (oi < 0 || oi >= static_cast<int>(world_.objects.size())) return {0, 0};
        if (oi >= static_cast<int>(prev_world.objects.size())) return {0, 0};
        return world_.objects[static_cast<std::size_t>(oi)].pos -
               prev_world.objects[static_cast<std::size_t>(oi)].pos;
    };
    for (int r = 0; r < s; ++r)
        for (int c = 0; c < s; ++c) {
            const std::size_t p = static_cast<std::size_t>(r) * s + c;
            const Vec2 d = entity_delta(prev_id_map[p]);
            gt.motion[p * 2 + 0] = static_cast<float>(d.x);
            gt.motion[p * 2 + 1] = static_cast<float>(d.y);
        }
    return gt;
}

Observation Simulator::observe() const {
    if (!initialized_) throw std::logic_error("observe: reset() must be called first");
    RenderResult rr = render_scene(cfg_, world_);
    Observation obs;
    obs.base_view = rr.frame;
    obs.hand_view = render_hand_view(rr.frame, cfg_, world_.gripper, world_.lighting);
    obs.state_pose = {world_.gripper.x, world_.gripper.y, 0.0, 0.0, 0.0, 0.0};
    obs.state_gripper = world_.gripper_closed ? 1 : 0;
    obs.instruction = instruction_;
    obs.ground_truth = ground_truth(rr.id_map, prev_world_);
    return obs;
}

Action Simulator::expert_action() const {
    if (done()) return Action{};
    const int k = world_.active_subtask;
    const auto& obj = world_.objects[static_cast<std::size_t>(k)];
    const auto& cont = world_.containers[static_cast<std::size_t>(k)];
    const bool holding = world_.held_object == k;

    Action a;
    a.gripper = world_.gripper_closed ? 1 : 0;
    const Vec2 target = holding ? cont.pos : obj.pos;
    const Vec2 d = target - world_.gripper;
    const double dist = d.norm();

    if (!holding) {
        if (world_.gripper_closed) {
            a.gripper = 0; // wrong/empty grasp: let go and retry
        } else if (dist <= kPhaseTolerance) {
            a.gripper = 1; // close on the grasp point
        }
    } else if (dist <= kPhaseTolerance) {
        a.gripper = 0; // release over the container center
    }

    const double ms = cfg_.max_step();
    a.delta[0] = std::clamp(d.x, -ms, ms);
    a.delta[1] = std::clamp(d.y, -ms, ms);
    return a;
}

void Simulator::schedule_perturbation(const Perturbation& p) {
    if (p.at_step < world_.frame)
        throw std::invalid_argument("perturbation: at_step is already in the past");
    if (p.at_step > cfg_.expert_step_budget() * 4)
        throw std::invalid_argument("perturbation: at_step beyond episode budget");
    pending_.push_back(p);
}

void Simulator::apply_perturbation(const Perturbation& p) {
    switch (p.kind) {
    case PerturbationKind::Relocation: {
        if (done()) return;
        auto& obj = world_.objects[static_cast<std::size_t>(world_.active_subtask)];
        if (obj.held) {
            obj.held = false;
            world_.held_object = -1;
        }
        std::vector<Vec2> taken;
        std::vector<double> taken_r;
        for (const auto& c : world_.containers) {
            taken.push_back(c.pos);
            taken_r.push_back(cfg_.container_radius());
        }
        for (const auto& o : world_.objects)
            if (&o != &obj) {
                taken.push_back(o.pos);
                taken_r.push_back(cfg_.object_radius());
            }
        obj.pos = sample_free_pose(perturb_rng_, cfg_.object_radius(), 2.0, taken, taken_r);
        break;
    }
    case PerturbationKind::Lighting: {
        world_.lighting.gain =
            p.lighting_gain ? *p.lighting_gain
                            : (perturb_rng_.uniform() < 0.5 ? perturb_rng_.uniform(0.45, 0.75)
                                                            : perturb_rng_.uniform(1.25, 1.55));
        world_.lighting.temp = {perturb_rng_.uniform(0.85, 1.15),
                                perturb_rng_.uniform(0.85, 1.15),
                                perturb_rng_.uniform(0.85, 1.15)};
        break;
    }
    case PerturbationKind::Distraction: {
        if (done()) return;
        const auto& target = world_.containers[static_cast<std::size_t>(world_.active_subtask)];
        // Identity combos not used by any instruction entity.
        std::vector<std::pair<int, int>> used;
        for (const auto& o : world_.objects)
            if (!o.distractor) used.emplace_back(o.color_id, static_cast<int>(o.shape));
        for (int n = 0; n < p.distractor_count; ++n) {
            ObjectState d;
            d.distractor = true;
            for (int tries = 0; tries < 64; ++tries) {
                d.color_id = perturb_rng_.uniform_index(static_cast<int>(color_table().size()));
                d.shape = static_cast<ObjectShape>(perturb_rng_.uniform_index(4));
                if (std::find(used.begin(), used.end(),
                              std::make_pair(d.color_id, static_cast<int>(d.shape))) ==
                    used.end())
                    break;
            }
            std::vector<Vec2> taken;
            std::vector<double> taken_r;
            for (const auto& c : world_.containers) {
                taken.push_back(c.pos);
                taken_r.push_back(cfg_.container_radius());
            }
            for (const auto& o : world_.objects) {
                taken.push_back(o.pos);
                taken_r.push_back(cfg_.object_radius());
            }
            // Near the target container: rejection sample in a ring around it.
            bool placed = false;
            for (int tries = 0; tries < 256 && !placed; ++tries) {
                const double ang = perturb_rng_.uniform(0.0, 2.0 * M_PI);
                const double rad = cfg_.container_radius() + cfg_.object_radius() + 2.0 +
                                   perturb_rng_.uniform(0.0, 2.0 * cfg_.object_radius());
                Vec2 cand{target.pos.x + rad * std::cos(ang), target.pos.y + rad * std::sin(ang)};
                const double margin = cfg_.object_radius() + 1.0;
                if (cand.x < margin || cand.y < margin || cand.x > cfg_.table_size - margin ||
                    cand.y > cfg_.table_size - margin)
                    continue;
                bool ok = true;
                for (std::size_t i = 0; i < taken.size(); ++i)
                    if ((cand - taken[i]).norm() < taken_r[i] + cfg_.object_radius() + 1.0) {
                        ok = false;
                        break;
                    }
                if (ok) {
                    d.pos = cand;
                    placed = true;
                }
            }
            if (!placed)
                d.pos = sample_free_pose(perturb_rng_, cfg_.object_radius(), 1.0, taken, taken_r);
            world_.objects.push_back(d);
        }
        break;
    }
    }
}

} // namespace palm::env
