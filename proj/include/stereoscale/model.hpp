#pragma once

#include "stereoscale/config.hpp"
#include "stereoscale/dataset.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace stereoscale
{
enum class LayerKind
{
        Conv, // same-padded convolution followed by ReLU
        AvgPool,
};

struct LayerSpec
{
        LayerKind kind = LayerKind::Conv;
        int kernel = 3;
        int stride = 1;
        int stage = 0; // 0, 1, 2

        bool operator==(const LayerSpec&) const = default;
};

// Stage receptive-field targets (V2, V3, V3A analogues): 0.59, 2.74 and 9.2 degrees, which are
// 11, 51 and 171 px of a 1024-wide 56-degree image. Targets scale with width.
inline constexpr std::array<double, 3> kStageRfTargetsPx1024 = {11.0, 51.0, 171.0};
inline constexpr double kRfTolerance = 0.10;

struct ModelConfig
{
        int width = 256;
        int height = 256;
        double fov_h_deg = 56.0;
        std::vector<LayerSpec> layers;
        std::array<int, 3> stage_channels = {8, 16, 16};
        // Disparity is divided by this before entering the network.
        double disparity_scale = 0.1;
        // Stage targets in pixels at `rf_reference_width`. Toy models override these.
        std::array<double, 3> rf_targets_ref_px = kStageRfTargetsPx1024;
        int rf_reference_width = 1024;

        double degrees_per_pixel() const
        {
                return fov_h_deg / width;
        }

        std::array<double, 3> rf_targets_px() const;
        std::array<double, 3> rf_targets_deg() const;

        bool operator==(const ModelConfig&) const = default;
};

struct ReceptiveField
{
        int size = 1; // pixels
        int jump = 1; // input pixels per output step
};

// Cumulative RF after each layer: rf += (k - 1) * jump; jump *= stride.
std::vector<ReceptiveField> receptive_fields(const std::vector<LayerSpec>& layers);
// RF at the end of each stage.
std::array<int, 3> stage_receptive_fields(const std::vector<LayerSpec>& layers);

// Throws ConfigError unless every stage RF lies within +-10% of its target.
void validate(const ModelConfig& cfg);

// Stage 1: conv5 conv5 conv3/4; stage 2: conv5 conv5 conv3/2; stage 3: conv5 x4.
std::vector<LayerSpec> reference_layers_1024();

// Stage 1: conv3/2; stage 2: avgpool2, conv3; stage 3: conv5/2, conv3. RFs {3, 13, 45}.
std::vector<LayerSpec> desk_layers_256();

// First built-in chain whose stage RFs meet the targets at `width`; ConfigError listing the
// width ranges each chain supports otherwise.
std::vector<LayerSpec> plan_layers(int width);

ModelConfig default_model_config(int width, int height, double fov_h_deg = 56.0);

std::string describe_layers(const std::vector<LayerSpec>& layers);
std::vector<LayerSpec> parse_layers(const std::string& text);

// Forward multiply-accumulates per sample; used for planning and reports.
double forward_macs(const ModelConfig& cfg);

struct NamedTensor
{
        std::string name;
        std::vector<std::uint32_t> shape;
        std::vector<float> values;

        std::size_t numel() const;
        bool operator==(const NamedTensor&) const = default;
};

struct ModelParams
{
        std::vector<NamedTensor> tensors;
        KeyValues metadata;

        const NamedTensor& at(const std::string& name) const;
        NamedTensor& at(const std::string& name);
        std::size_t parameter_count() const;
};

// Shapes implied by a config: conv{i}.weight [out, in, k, k], conv{i}.bias [out],
// head.weight [1, C], head.bias [1].
std::vector<NamedTensor> parameter_layout(const ModelConfig& cfg);

// Fan-in scaled uniform initialization; deterministic in seed.
ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed);

// Metadata keys carrying the config echo.
void write_config_metadata(const ModelConfig& cfg, KeyValues& metadata);
ModelConfig config_from_metadata(const KeyValues& metadata);

void save_params(const ModelParams& params, const std::filesystem::path& path);
std::string serialize_params(const ModelParams& params);
ModelParams load_params(const std::filesystem::path& path);
// Also checks every tensor shape against `expected`.
ModelParams load_params(const std::filesystem::path& path, const ModelConfig& expected);
void check_shapes(const ModelParams& params, const ModelConfig& cfg);
}
