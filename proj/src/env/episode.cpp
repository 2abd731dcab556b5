#include "palm/env/episode.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace palm::env {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string frame_name(const char* prefix, int t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%05d.png", prefix, t);
    return buf;
}

std::string mask_name(int id, int t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "mask_%03d_%05d.png", id, t);
    return buf;
}

json frame_to_step_json(const EpisodeRecord& ep, int t) {
    const FrameRecord& f = ep.frames[static_cast<std::size_t>(t)];
    json j;
    j["t"] = t;
    j["state"] = f.state;
    if (t < static_cast<int>(ep.actions.size()))
        j["action"] = ep.actions[static_cast<std::size_t>(t)];
    else
        j["action"] = nullptr;
    j["subtask"] = f.subtask;
    if (f.contact)
        j["contact"] = *f.contact;
    else
        j["contact"] = nullptr;
    j["placement"] = f.placement_points;
    j["referent"] = f.referent_id;
    j["target"] = f.target_container_id;
    json poses = json::object();
    for (const auto& [id, p] : f.entity_poses) poses[std::to_string(id)] = p;
    j["poses"] = poses;
    j["gripper"] = {f.gripper_pos[0], f.gripper_pos[1], f.gripper_closed ? 1.0 : 0.0};
    return j;
}

} // namespace

std::vector<int> EpisodeRecord::subtask_starts() const {
    std::vector<int> starts;
    int b = 0;
    for (int e : subtask_ends) {
        starts.push_back(std::min(b, e));
        b = e + 1;
    }
    return starts;
}

int EpisodeRecord::subtask_of(int t) const {
    for (std::size_t i = 0; i < subtask_ends.size(); ++i)
        if (t <= subtask_ends[i]) return static_cast<int>(i);
    return chain_length > 0 ? chain_length - 1 : 0;
}

SceneConfig EpisodeRecord::scene_config() const {
    SceneConfig cfg;
    cfg.table_size = table_size;
    cfg.chain_length = chain_length;
    cfg.num_objects = num_objects;
    cfg.num_containers = num_containers;
    cfg.seed = config_seed;
    return cfg;
}

EpisodeRecord record_expert_episode(Simulator& sim, std::uint64_t episode_seed,
                                    const std::vector<Perturbation>& perturbations) {
    EpisodeRecord ep;
    const SceneConfig& cfg = sim.config();
    ep.episode_seed = episode_seed;
    ep.config_seed = cfg.seed;
    ep.table_size = cfg.table_size;
    ep.chain_length = cfg.chain_length;
    ep.num_objects = cfg.num_objects;
    ep.num_containers = cfg.num_containers;

    Observation obs = sim.reset(episode_seed);
    for (const auto& p : perturbations) sim.schedule_perturbation(p);
    ep.instruction = sim.instruction();

    auto capture = [&](const Observation& o, int partition_subtask) {
        FrameRecord f;
        f.base = o.base_view;
        f.hand = o.hand_view;
        f.id_map = o.ground_truth.id_map;
        for (int i = 0; i < 6; ++i) f.state[static_cast<std::size_t>(i)] = o.state_pose[static_cast<std::size_t>(i)];
        f.state[6] = o.state_gripper;
        f.subtask = partition_subtask;
        f.referent_id = o.ground_truth.referent_id;
        f.target_container_id = o.ground_truth.target_container_id;
        f.contact = o.ground_truth.contact;
        f.placement_points = o.ground_truth.placement_points;
        const auto& w = sim.world();
        for (std::size_t i = 0; i < w.containers.size(); ++i)
            f.entity_poses[sim.container_id(static_cast<int>(i))] = {w.containers[i].pos.x,
                                                                     w.containers[i].pos.y};
        for (std::size_t i = 0; i < w.objects.size(); ++i)
            f.entity_poses[sim.object_id(static_cast<int>(i))] = {w.objects[i].pos.x,
                                                                  w.objects[i].pos.y};
        f.gripper_pos = {w.gripper.x, w.gripper.y};
        f.gripper_closed = w.gripper_closed;
        ep.frames.push_back(std::move(f));
    };

    capture(obs, 0);
    const int budget = cfg.expert_step_budget();
    while (!sim.done() && sim.frame() < budget) {
        const int active_before = sim.world().active_subtask;
        const Action a = sim.expert_action();
        auto [next_obs, ev] = sim.step(a);
        std::array<double, 7> rec{};
        for (int i = 0; i < 6; ++i) rec[static_cast<std::size_t>(i)] = a.delta[static_cast<std::size_t>(i)];
        rec[6] = a.gripper;
        ep.actions.push_back(rec);
        if (ev.subtask_completed) {
            const int now = sim.world().active_subtask;
            for (int k = active_before; k < now; ++k) ep.subtask_ends.push_back(sim.frame());
        }
        capture(next_obs, ev.subtask_completed ? active_before : sim.world().active_subtask);
    }
    ep.completed = sim.done();
    return ep;
}

void save_episode(const EpisodeRecord& ep, const std::string& dir) {
    fs::create_directories(dir);

    json meta;
    meta["seed"] = ep.episode_seed;
    meta["config_seed"] = ep.config_seed;
    meta["k"] = ep.chain_length;
    meta["table_size"] = ep.table_size;
    meta["num_objects"] = ep.num_objects;
    meta["num_containers"] = ep.num_containers;
    meta["instruction"] = ep.instruction;
    meta["length"] = ep.length();
    meta["subtask_ends"] = ep.subtask_ends;
    meta["completed"] = ep.completed;
    {
        std::ofstream out(fs::path(dir) / "meta.json");
        if (!out) throw std::runtime_error("io-failure: cannot write meta.json in " + dir);
        out << meta.dump(2) << "\n";
    }

    {
        std::ofstream out(fs::path(dir) / "steps.jsonl");
        if (!out) throw std::runtime_error("io-failure: cannot write steps.jsonl in " + dir);
        for (int t = 0; t < ep.length(); ++t) out << frame_to_step_json(ep, t).dump() << "\n";
    }

    const int s = ep.table_size;
    for (int t = 0; t < ep.length(); ++t) {
        const FrameRecord& f = ep.frames[static_cast<std::size_t>(t)];
        write_png((fs::path(dir) / frame_name("base", t)).string(), f.base);
        write_png((fs::path(dir) / frame_name("hand", t)).string(), f.hand);
        for (const auto& [id, pos] : f.entity_poses) {
            (void)pos;
            ImageU8 m;
            m.width = s;
            m.height = s;
            m.channels = 1;
            m.pixels.assign(static_cast<std::size_t>(s) * s, 0);
            bool any = false;
            for (std::size_t i = 0; i < f.id_map.size(); ++i)
                if (f.id_map[i] == static_cast<std::uint8_t>(id)) {
                    m.pixels[i] = 255;
                    any = true;
                }
            (void)any;
            write_png((fs::path(dir) / mask_name(id, t)).string(), m);
        }
    }
}

EpisodeRecord load_episode(const std::string& dir) {
    std::ifstream meta_in(fs::path(dir) / "meta.json");
    if (!meta_in) throw std::runtime_error("io-failure: cannot read meta.json in " + dir);
    json meta = json::parse(meta_in);

    EpisodeRecord ep;
    ep.episode_seed = meta.at("seed").get<std::uint64_t>();
    ep.config_seed = meta.at("config_seed").get<std::uint64_t>();
    ep.chain_length = meta.at("k").get<int>();
    ep.table_size = meta.at("table_size").get<int>();
    ep.num_objects = meta.at("num_objects").get<int>();
    ep.num_containers = meta.at("num_containers").get<int>();
    ep.instruction = meta.at("instruction").get<std::string>();
    ep.subtask_ends = meta.at("subtask_ends").get<std::vector<int>>();
    ep.completed = meta.at("completed").get<bool>();
    const int length = meta.at("length").get<int>();

    const SceneConfig cfg = ep.scene_config();
    std::ifstream steps_in(fs::path(dir) / "steps.jsonl");
    if (!steps_in) throw std::runtime_error("io-failure: cannot read steps.jsonl in " + dir);
    std::string line;
    int t = 0;
    while (std::getline(steps_in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        FrameRecord f;
        f.state = j.at("state").get<std::array<double, 7>>();
        f.subtask = j.at("subtask").get<int>();
        f.referent_id = j.at("referent").get<int>();
        f.target_container_id = j.at("target").get<int>();
        if (!j.at("contact").is_null()) f.contact = j.at("contact").get<std::array<int, 2>>();
        f.placement_points = j.at("placement").get<std::vector<std::array<int, 2>>>();
        for (const auto& [key, val] : j.at("poses").items())
            f.entity_poses[std::stoi(key)] = val.get<std::array<double, 2>>();
        const auto grip = j.at("gripper").get<std::array<double, 3>>();
        f.gripper_pos = {grip[0], grip[1]};
        f.gripper_closed = grip[2] != 0.0;

        f.base = read_png((fs::path(dir) / frame_name("base", t)).string());
        f.hand = read_png((fs::path(dir) / frame_name("hand", t)).string());

        // Rebuild the occlusion-aware id map. Saved masks hold exactly the
        // visible pixels of each instance, so painting the deterministic
        // gripper footprint first and the masks on top reproduces the
        // original map (a held object is rendered above the gripper).
        const int s = ep.table_size;
        f.id_map.assign(static_cast<std::size_t>(s) * s, 0);
        const auto grip_ids =
            gripper_footprint(cfg, {f.gripper_pos[0], f.gripper_pos[1]}, f.gripper_closed);
        for (std::size_t i = 0; i < f.id_map.size(); ++i)
            if (grip_ids[i]) f.id_map[i] = kGripperId;
        for (const auto& [id, pos] : f.entity_poses) {
            (void)pos;
            ImageU8 m = read_png((fs::path(dir) / mask_name(id, t)).string());
            for (std::size_t i = 0; i < f.id_map.size(); ++i)
                if (m.pixels[i]) f.id_map[i] = static_cast<std::uint8_t>(id);
        }

        if (!j.at("action").is_null())
            ep.actions.push_back(j.at("action").get<std::array<double, 7>>());
        ep.frames.push_back(std::move(f));
        ++t;
    }
    if (t != length) throw std::runtime_error("corrupt-episode: step count mismatch in " + dir);
    return ep;
}

std::string DatasetManifest::to_json() const {
    json j;
    j["episodes"] = json::array();
    for (const auto& e : episodes)
        j["episodes"].push_back({{"dir", e.dir}, {"seed", e.seed}, {"length", e.length}, {"k", e.k}});
    j["discarded_seeds"] = discarded_seeds;
    j["config"] = {{"table_size", config.table_size},
                   {"num_objects", config.num_objects},
                   {"num_containers", config.num_containers},
                   {"k", config.chain_length},
                   {"palette", config.palette},
                   {"seed", config.seed}};
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    json j = json::parse(text);
    DatasetManifest m;
    for (const auto& e : j.at("episodes"))
        m.episodes.push_back({e.at("dir").get<std::string>(), e.at("seed").get<std::uint64_t>(),
                              e.at("length").get<int>(), e.at("k").get<int>()});
    m.discarded_seeds = j.at("discarded_seeds").get<std::vector<std::uint64_t>>();
    const auto& c = j.at("config");
    m.config.table_size = c.at("table_size").get<int>();
    m.config.num_objects = c.at("num_objects").get<int>();
    m.config.num_containers = c.at("num_containers").get<int>();
    m.config.chain_length = c.at("k").get<int>();
    m.config.palette = c.at("palette").get<std::vector<std::string>>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    return m;
}

DatasetManifest generate_dataset(const SceneConfig& cfg, int n_episodes,
                                 const std::string& out_dir) {
    if (n_episodes < 0) throw std::invalid_argument("generate_dataset: negative episode count");
    cfg.validate();
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.config = cfg;

    Simulator sim(cfg);
    for (int i = 0; i < n_episodes; ++i) {
        const auto seed = static_cast<std::uint64_t>(i);
        EpisodeRecord ep = record_expert_episode(sim, seed);
        if (!ep.completed) {
            manifest.discarded_seeds.push_back(seed);
            std::fprintf(stderr, "[gen-data] discarding episode seed=%llu: expert over budget\n",
                         static_cast<unsigned long long>(seed));
            continue;
        }
        char name[32];
        std::snprintf(name, sizeof(name), "ep_%05d", i);
        const std::string dir = (fs::path(out_dir) / name).string();
        save_episode(ep, dir);
        manifest.episodes.push_back({name, seed, ep.length(), ep.chain_length});
    }

    {
        std::ofstream out(fs::path(out_dir) / "manifest.json");
        if (!out) throw std::runtime_error("io-failure: cannot write manifest.json");
        out << manifest.to_json();
    }
    {
        json v = json::object();
        const auto vocab = build_vocabulary();
        for (std::size_t i = 0; i < vocab.size(); ++i) v[vocab[i]] = static_cast<int>(i);
        std::ofstream out(fs::path(out_dir) / "vocab.json");
        if (!out) throw std::runtime_error("io-failure: cannot write vocab.json");
        out << v.dump(2) << "\n";
    }
    return manifest;
}

DatasetManifest load_manifest(const std::string& dataset_dir) {
    std::ifstream in(fs::path(dataset_dir) / "manifest.json");
    if (!in) throw std::runtime_error("io-failure: cannot read manifest.json in " + dataset_dir);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return DatasetManifest::from_json(text);
}

std::vector<EpisodeRecord> load_dataset(const std::string& dataset_dir) {
    const DatasetManifest m = load_manifest(dataset_dir);
    std::vector<EpisodeRecord> eps;
    eps.reserve(m.episodes.size());
    for (const auto& e : m.episodes)
        eps.push_back(load_episode((fs::path(dataset_dir) / e.dir).string()));
    return eps;
}

} // namespace palm::env
