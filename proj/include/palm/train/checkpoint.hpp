#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "palm/model/policy.hpp"
#include "palm/train/optimizer.hpp"

namespace palm::train {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[8] = {'P', 'A', 'L', 'M', 'C', 'K', 'P', 'T'};

struct TrainState {
    std::int64_t step = 0;
    int epoch = 0;
    std::int64_t adam_t = 0;
    std::array<std::uint64_t, 4> rng_state{};
    bool has_moments = false;
};

template <class S>
const char* dtype_name() {
    if constexpr (std::is_same_v<S, float>) return "f32";
    else return "f64";
}

/// Versioned container: JSON header (config, vocab, tensor directory, train
/// state) followed by raw little-endian parameter data, then optimizer
/// moments when present.
template <class S>
void save_checkpoint(const std::string& path, model::PalmModel<S>& model,
                     const TrainState& state, AdamW<S>* opt = nullptr) {
    nlohmann::json header;
    header["model"] = model.config().to_json();
    header["vocab"] = model.vocab();
    header["dtype"] = dtype_name<S>();
    header["train_state"] = {{"step", state.step},
                             {"epoch", state.epoch},
                             {"adam_t", opt ? opt->step_count() : state.adam_t},
                             {"rng_state", state.rng_state},
                             {"has_moments", opt != nullptr}};
    nlohmann::json dir = nlohmann::json::array();
    std::int64_t offset = 0;
    for (const auto& e : model.params().entries()) {
        dir.push_back({{"name", e.name}, {"dims", e.value.dims()}, {"offset", offset}});
        offset += e.value.size();
    }
    header["params"] = dir;
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("io-failure: cannot write checkpoint " + path);
    out.write(kCheckpointMagic, 8);
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t hlen = header_text.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    auto write_tensor = [&](const Tensor<S>& t) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(S)));
    };
    for (const auto& e : model.params().entries()) write_tensor(e.value);
    if (opt) {
        for (const auto& m : opt->first_moments()) write_tensor(m);
        for (const auto& v : opt->second_moments()) write_tensor(v);
    }
    if (!out) throw std::runtime_error("io-failure: short write on checkpoint " + path);
}

struct CheckpointHeader {
    model::ModelConfig config;
    std::vector<std::string> vocab;
    std::string dtype;
    TrainState state;
    nlohmann::json params_dir;
    std::streampos data_begin = 0;
};

inline CheckpointHeader read_checkpoint_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kCheckpointVersion)
        throw std::runtime_error("version-mismatch: checkpoint version " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string text(hlen, '\0');
    in.read(text.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);

    nlohmann::json j = nlohmann::json::parse(text);
    CheckpointHeader h;
    h.config = model::ModelConfig::from_json(j.at("model"));
    h.vocab = j.at("vocab").get<std::vector<std::string>>();
    h.dtype = j.at("dtype").get<std::string>();
    const auto& ts = j.at("train_state");
    h.state.step = ts.at("step").get<std::int64_t>();
    h.state.epoch = ts.at("epoch").get<int>();
    h.state.adam_t = ts.at("adam_t").get<std::int64_t>();
    h.state.rng_state = ts.at("rng_state").get<std::array<std::uint64_t, 4>>();
    h.state.has_moments = ts.at("has_moments").get<bool>();
    h.params_dir = j.at("params");
    h.data_begin = in.tellg();
    return h;
}

/// Loads weights into an existing model; every tensor's name and shape must
/// match, otherwise the error names both shapes.
template <class S>
TrainState load_checkpoint_into(const std::string& path, model::PalmModel<S>& model,
                                AdamW<S>* opt = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io-failure: cannot read checkpoint " + path);
    CheckpointHeader h = read_checkpoint_header(in, path);
    if (h.dtype != dtype_name<S>())
        throw std::runtime_error("checkpoint: dtype " + h.dtype + " does not match build " +
                                 dtype_name<S>());

    auto& entries = model.params().entries();
    if (h.params_dir.size() != entries.size())
        throw std::runtime_error("shape-mismatch: checkpoint has " +
                                 std::to_string(h.params_dir.size()) + " tensors, model has " +
                                 std::to_string(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& rec = h.params_dir[i];
        const std::string name = rec.at("name").get<std::string>();
        const auto dims = rec.at("dims").get<std::vector<int>>();
        if (name != entries[i].name)
            throw std::runtime_error("shape-mismatch: tensor order differs at " + name + " vs " +
                                     entries[i].name);
        if (dims != entries[i].value.dims())
            throw std::runtime_error(
                "shape-mismatch: " + name + " stored " + Tensor<S>::shape_str(dims) +
                ", model expects " + entries[i].value.shape_str());
    }

    auto read_tensor = [&](Tensor<S>& t) {
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(S)));
    };
    for (auto& e : entries) read_tensor(e.value);
    if (opt) {
        if (!h.state.has_moments)
            throw std::runtime_error("checkpoint: no optimizer state stored in " + path);
        for (auto& m : opt->first_moments()) read_tensor(m);
        for (auto& v : opt->second_moments()) read_tensor(v);
        opt->set_step_count(h.state.adam_t);
    }
    if (!in) throw std::runtime_error("checkpoint: truncated data in " + path);
    return h.state;
}

/// Builds a fresh model from the stored config, then loads the weights.
template <class S>
std::unique_ptr<model::PalmModel<S>> load_checkpoint(const std::string& path,
                                                     TrainState* state_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("io-failure: cannot read checkpoint " + path);
    CheckpointHeader h = read_checkpoint_header(in, path);
    in.close();
    auto model = std::make_unique<model::PalmModel<S>>(h.config, /*init_seed=*/0, h.vocab);
    TrainState st = load_checkpoint_into(path, *model);
    if (state_out) *state_out = st;
    return model;
}

} // namespace palm::train
