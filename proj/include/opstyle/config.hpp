#pragma once

// Generator architecture description. A generator is a learned constant input
// followed by a chain of style-modulated conv layers; each layer convolves,
// adds bias, leaky-rectifies, then optionally upsamples 2x. A final 1x1 conv
// maps the last feature stack to RGB.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "opstyle/common.hpp"

namespace opstyle {

// How conv weights are modulated by style:
//  baseline  - one style vector per layer, scales weight columns (input channels)
//  overparam - one style row per output channel, scales full weight rows
enum class ModulationMode { baseline, overparam };

inline std::string to_string(ModulationMode m) {
    return m == ModulationMode::baseline ? "baseline" : "overparam";
}

inline ModulationMode modulation_mode_from_string(const std::string& s) {
    if (s == "baseline") return ModulationMode::baseline;
    if (s == "overparam") return ModulationMode::overparam;
    fail_arg("unknown modulation mode '" + s + "'");
}

struct LayerSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    bool upsample = false; // applied after conv+bias+activation
};

struct GeneratorConfig {
    int latent_dim = 64;     // D: width of z and w
    int latent_rows = 64;    // R: rows of the latent matrix in overparam mode
    int mapping_layers = 2;
    ModulationMode mode = ModulationMode::overparam;
    int const_channels = 48; // learned constant input
    int base_resolution = 4;
    std::vector<LayerSpec> layers;

    int num_layers() const { return int(layers.size()); }

    // spatial size at which layer l's conv runs
    int layer_resolution(int l) const {
        int r = base_resolution;
        for (int i = 0; i < l; ++i)
            if (layers[size_t(i)].upsample) r *= 2;
        return r;
    }

    int output_resolution() const { return layer_resolution(num_layers()); }

    int max_out_channels() const {
        int m = 0;
        for (const auto& L : layers) m = std::max(m, L.out_channels);
        return m;
    }

    void validate() const {
        check_arg(latent_dim >= 1, "config: latent_dim must be positive");
        check_arg(latent_rows >= 1, "config: latent_rows must be positive");
        check_arg(mapping_layers >= 1, "config: mapping_layers must be positive");
        check_arg(const_channels >= 1, "config: const_channels must be positive");
        check_arg(base_resolution >= 1, "config: base_resolution must be positive");
        check_arg(!layers.empty(), "config: at least one layer required");
        int prev = const_channels;
        for (size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            const std::string tag = "config: layer " + std::to_string(l);
            check_arg(L.in_channels == prev, tag + ": in_channels must chain from previous layer");
            check_arg(L.out_channels >= 1, tag + ": out_channels must be positive");
            check_arg(L.kernel >= 1 && L.kernel % 2 == 1, tag + ": kernel must be odd");
            prev = L.out_channels;
        }
        if (mode == ModulationMode::overparam)
            check_arg(latent_rows >= max_out_channels(),
                      "config: latent_rows must cover the widest layer's output channels");
    }

    // small model that trains and inverts in seconds on one core
    static GeneratorConfig desk_default() {
        GeneratorConfig c;
        c.latent_dim = 64;
        c.latent_rows = 64;
        c.mapping_layers = 2;
        c.mode = ModulationMode::overparam;
        c.const_channels = 48;
        c.base_resolution = 4;
        c.layers = {
            {48, 48, 3, true},  // 4x4 -> 8x8
            {48, 32, 3, true},  // 8x8 -> 16x16
            {32, 24, 3, true},  // 16x16 -> 32x32
            {24, 16, 3, false}, // 32x32
        };
        return c;
    }
};

inline void to_json(nlohmann::json& j, const LayerSpec& L) {
    j = {{"in_channels", L.in_channels},
         {"out_channels", L.out_channels},
         {"kernel", L.kernel},
         {"upsample", L.upsample}};
}

inline void from_json(const nlohmann::json& j, LayerSpec& L) {
    j.at("in_channels").get_to(L.in_channels);
    j.at("out_channels").get_to(L.out_channels);
    j.at("kernel").get_to(L.kernel);
    j.at("upsample").get_to(L.upsample);
}

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = {{"latent_dim", c.latent_dim},
         {"latent_rows", c.latent_rows},
         {"mapping_layers", c.mapping_layers},
         {"mode", to_string(c.mode)},
         {"const_channels", c.const_channels},
         {"base_resolution", c.base_resolution},
         {"layers", c.layers}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    j.at("latent_dim").get_to(c.latent_dim);
    j.at("latent_rows").get_to(c.latent_rows);
    j.at("mapping_layers").get_to(c.mapping_layers);
    c.mode = modulation_mode_from_string(j.at("mode").get<std::string>());
    j.at("const_channels").get_to(c.const_channels);
    j.at("base_resolution").get_to(c.base_resolution);
    j.at("layers").get_to(c.layers);
}

} // namespace opstyle
