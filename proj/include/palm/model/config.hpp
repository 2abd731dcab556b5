#pragma once

#include <string>

#include <json.hpp>

#include "palm/env/scene.hpp"
#include "palm/model/backbone.hpp"
#include "palm/model/diffusion.hpp"
#include "palm/model/heads.hpp"
#include "palm/model/losses.hpp"
#include "palm/supervision/targets.hpp"

namespace palm::model {

struct AblationFlags {
    bool no_affordance = false;
    bool no_inverse_dynamics = false;
    bool no_progress = false;
};

/// Everything a checkpoint needs to rebuild the exact model: module widths,
/// supervision recipe and environment scaling constants.
struct ModelConfig {
    EncoderConfig encoder;
    BackboneConfig backbone;
    HeadsConfig heads;
    DiffusionConfig diffusion;
    supervision::SupervisionConfig supervision;
    env::SceneConfig scene;
    AblationFlags ablation;
    int history_length = 7;
    double max_step = 4.0; // env action scale, pixels per component

    /// Applies the ablation flags and cross-field consistency rules.
    void finalize() {
        encoder.raster = scene.table_size;
        heads.raster = scene.table_size;
        heads.d_model = backbone.d_model;
        heads.feature_dim = encoder.vision_width;
        heads.spatial_candidates = supervision.predicted_candidates;
        encoder.max_stages = std::max(encoder.max_stages, scene.chain_length + 1);
        max_step = scene.max_step();
        supervision.history_length = history_length;
        diffusion.channels = ablation.no_progress ? 7 : 8;
        diffusion.chunk_len = ablation.no_inverse_dynamics ? 1 : supervision.future_offset;
        encoder.validate();
        backbone.validate();
        heads.validate();
        diffusion.validate();
        supervision.validate();
    }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

inline nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j;
    j["encoder"] = {{"patch", encoder.patch},
                    {"vision_width", encoder.vision_width},
                    {"vision_layers", encoder.vision_layers},
                    {"vision_heads", encoder.vision_heads},
                    {"resampled_tokens", encoder.resampled_tokens},
                    {"resampler_layers", encoder.resampler_layers},
                    {"resampler_heads", encoder.resampler_heads},
                    {"vocab_size", encoder.vocab_size},
                    {"state_width", encoder.state_width},
                    {"d_model", encoder.d_model},
                    {"max_stages", encoder.max_stages}};
    j["backbone"] = {{"d_model", backbone.d_model},
                     {"layers", backbone.layers},
                     {"heads", backbone.heads},
                     {"max_timesteps", backbone.max_timesteps}};
    j["heads"] = {{"patch", heads.patch},
                  {"vae_latent", heads.vae_latent},
                  {"layers", heads.layers},
                  {"heads", heads.heads}};
    j["diffusion"] = {{"train_steps", diffusion.train_steps},
                      {"sample_steps", diffusion.sample_steps},
                      {"layers", diffusion.layers},
                      {"heads", diffusion.heads},
                      {"d_model", diffusion.d_model},
                      {"cosine_s", diffusion.cosine_s},
                      {"alpha_bar_floor", diffusion.alpha_bar_floor}};
    j["supervision"] = {{"future_offset", supervision.future_offset},
                        {"history_offset", supervision.history_offset},
                        {"grid_side", supervision.grid_side},
                        {"displacement_threshold", supervision.displacement_threshold},
                        {"heatmap_sigma", supervision.heatmap_sigma},
                        {"predicted_candidates", supervision.predicted_candidates},
                        {"target_points", supervision.target_points},
                        {"norm_epsilon", supervision.norm_epsilon},
                        {"disk_radius", supervision.disk_radius}};
    j["scene"] = {{"table_size", scene.table_size},
                  {"num_objects", scene.num_objects},
                  {"num_containers", scene.num_containers},
                  {"k", scene.chain_length},
                  {"palette", scene.palette},
                  {"seed", scene.seed}};
    j["ablation"] = {{"no_affordance", ablation.no_affordance},
                     {"no_inverse_dynamics", ablation.no_inverse_dynamics},
                     {"no_progress", ablation.no_progress}};
    j["history_length"] = history_length;
    return j;
}

inline ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    auto get = [](const nlohmann::json& obj, const char* key, auto& out) {
        if (obj.contains(key)) out = obj.at(key).template get<std::decay_t<decltype(out)>>();
    };
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        get(e, "patch", c.encoder.patch);
        get(e, "vision_width", c.encoder.vision_width);
        get(e, "vision_layers", c.encoder.vision_layers);
        get(e, "vision_heads", c.encoder.vision_heads);
        get(e, "resampled_tokens", c.encoder.resampled_tokens);
        get(e, "resampler_layers", c.encoder.resampler_layers);
        get(e, "resampler_heads", c.encoder.resampler_heads);
        get(e, "vocab_size", c.encoder.vocab_size);
        get(e, "state_width", c.encoder.state_width);
        get(e, "d_model", c.encoder.d_model);
        get(e, "max_stages", c.encoder.max_stages);
    }
    if (j.contains("backbone")) {
        const auto& b = j.at("backbone");
        get(b, "d_model", c.backbone.d_model);
        get(b, "layers", c.backbone.layers);
        get(b, "heads", c.backbone.heads);
        get(b, "max_timesteps", c.backbone.max_timesteps);
    }
    if (j.contains("heads")) {
        const auto& h = j.at("heads");
        get(h, "patch", c.heads.patch);
        get(h, "vae_latent", c.heads.vae_latent);
        get(h, "layers", c.heads.layers);
        get(h, "heads", c.heads.heads);
    }
    if (j.contains("diffusion")) {
        const auto& d = j.at("diffusion");
        get(d, "train_steps", c.diffusion.train_steps);
        get(d, "sample_steps", c.diffusion.sample_steps);
        get(d, "layers", c.diffusion.layers);
        get(d, "heads", c.diffusion.heads);
        get(d, "d_model", c.diffusion.d_model);
        get(d, "cosine_s", c.diffusion.cosine_s);
        get(d, "alpha_bar_floor", c.diffusion.alpha_bar_floor);
    }
    if (j.contains("supervision")) {
        const auto& s = j.at("supervision");
        get(s, "future_offset", c.supervision.future_offset);
        get(s, "history_offset", c.supervision.history_offset);
        get(s, "grid_side", c.supervision.grid_side);
        get(s, "displacement_threshold", c.supervision.displacement_threshold);
        get(s, "heatmap_sigma", c.supervision.heatmap_sigma);
        get(s, "predicted_candidates", c.supervision.predicted_candidates);
        get(s, "target_points", c.supervision.target_points);
        get(s, "norm_epsilon", c.supervision.norm_epsilon);
        get(s, "disk_radius", c.supervision.disk_radius);
    }
    if (j.contains("scene")) {
        const auto& s = j.at("scene");
        get(s, "table_size", c.scene.table_size);
        get(s, "num_objects", c.scene.num_objects);
        get(s, "num_containers", c.scene.num_containers);
        get(s, "k", c.scene.chain_length);
        get(s, "palette", c.scene.palette);
        get(s, "seed", c.scene.seed);
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        get(a, "no_affordance", c.ablation.no_affordance);
        get(a, "no_inverse_dynamics", c.ablation.no_inverse_dynamics);
        get(a, "no_progress", c.ablation.no_progress);
    }
    get(j, "history_length", c.history_length);
    c.finalize();
    return c;
}

} // namespace palm::model
