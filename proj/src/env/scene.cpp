#include "palm/env/scene.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace palm::env {

double Vec2::norm() const { return std::sqrt(x * x + y * y); }

const std::vector<ColorSpec>& color_table() {
    static const std::vector<ColorSpec> table = {
        {"red", {220, 60, 50}},    {"green", {70, 185, 70}},  {"blue", {55, 110, 235}},
        {"yellow", {230, 205, 50}}, {"magenta", {215, 60, 170}}, {"cyan", {55, 195, 205}},
        {"orange", {240, 140, 40}}, {"purple", {130, 75, 200}}, {"pink", {245, 150, 185}},
        {"teal", {35, 150, 140}},
    };
    return table;
}

const char* shape_name(ObjectShape s) {
    switch (s) {
    case ObjectShape::Circle: return "circle";
    case ObjectShape::Square: return "square";
    case ObjectShape::Triangle: return "triangle";
    case ObjectShape::Diamond: return "diamond";
    }
    return "circle";
}

const char* shape_name(ContainerShape s) {
    switch (s) {
    case ContainerShape::Bowl: return "bowl";
    case ContainerShape::Box: return "box";
    }
    return "bowl";
}

void SceneConfig::validate() const {
    if (chain_length < 1) throw std::invalid_argument("invalid-config: chain_length must be >= 1");
    if (num_objects < chain_length)
        throw std::invalid_argument("invalid-config: need at least chain_length objects");
    if (num_containers < chain_length)
        throw std::invalid_argument("invalid-config: need at least chain_length containers");
    if (table_size < 24)
        throw std::invalid_argument("invalid-config: table_size too small (< 24)");
    for (const auto& name : palette) {
        bool found = false;
        for (const auto& c : color_table())
            if (c.name == name) found = true;
        if (!found) throw std::invalid_argument("invalid-config: unknown palette color " + name);
    }
    const double usable = table_size - 2.0 * (container_radius() + 2.0);
    double footprint = num_containers * 4.0 * container_radius() * container_radius() +
                       num_objects * 4.0 * object_radius() * object_radius();
    if (usable <= 0 || footprint > usable * usable)
        throw std::invalid_argument("invalid-config: raster too small to place " +
                                    std::to_string(num_objects + num_containers) +
                                    " entities without overlap");
}

void Action::validate(double max_step) const {
    for (int i = 0; i < 6; ++i)
        if (std::abs(delta[i]) > max_step + 1e-9)
            throw std::invalid_argument("action: |delta| exceeds max step");
    for (int i = 2; i < 6; ++i)
        if (delta[i] != 0.0)
            throw std::invalid_argument("action: non-planar pose components must be 0");
    if (gripper != 0 && gripper != 1)
        throw std::invalid_argument("action: gripper command must be 0 or 1");
}

std::vector<std::string> build_vocabulary() {
    std::vector<std::string> vocab = {"put", "the", "on", "then"};
    for (const auto& c : color_table()) vocab.push_back(c.name);
    vocab.insert(vocab.end(), {"circle", "square", "triangle", "diamond", "bowl", "box"});
    return vocab;
}

std::vector<int> tokenize(const std::string& text, const std::vector<std::string>& vocab) {
    std::unordered_map<std::string, int> index;
    for (std::size_t i = 0; i < vocab.size(); ++i) index[vocab[i]] = static_cast<int>(i);
    std::vector<int> ids;
    std::istringstream ss(text);
    std::string word;
    while (ss >> word) {
        auto it = index.find(word);
        if (it == index.end()) throw std::out_of_range("out-of-vocabulary word: " + word);
        ids.push_back(it->second);
    }
    return ids;
}

} // namespace palm::env
