#pragma once

#include "stereoscale/network.hpp"
#include "stereoscale/random.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace toy
{
// 16x16 model touching every layer type: conv stride 1, pooling, conv stride 2, masked mean, head.
// Stage RFs are 3, 8 and 16 px.
inline stereoscale::ModelConfig config()
{
        using stereoscale::LayerKind;
        stereoscale::ModelConfig cfg;
        cfg.width = 16;
        cfg.height = 16;
        cfg.layers = {
                {LayerKind::Conv, 3, 1, 0},
                {LayerKind::AvgPool, 2, 2, 1},
                {LayerKind::Conv, 3, 2, 1},
                {LayerKind::Conv, 3, 1, 2},
        };
        cfg.stage_channels = {3, 4, 2};
        cfg.rf_targets_ref_px = {3, 8, 16};
        cfg.rf_reference_width = 16;
        return cfg;
}

// Random disparity in radians with a ragged mask (about a quarter masked out).
template <typename T>
stereoscale::ModelInput<T> input(const stereoscale::ModelConfig& cfg, std::uint64_t seed)
{
        stereoscale::Rng rng(seed);
        stereoscale::Grid<float> disparity(cfg.width, cfg.height);
        stereoscale::Grid<float> mask(cfg.width, cfg.height);
        for (int v = 0; v < cfg.height; ++v)
        {
                for (int u = 0; u < cfg.width; ++u)
                {
                        mask(u, v) = rng.uniform(0.0, 1.0) < 0.75 ? 1.0f : 0.0f;
                        disparity(u, v) = static_cast<float>(rng.uniform(-0.1, 0.1));
                }
        }
        return stereoscale::prepare_input<T>(disparity, mask, cfg);
}

// ReLU on/off pattern of every convolution output.
inline std::vector<bool> activation_pattern(const stereoscale::Network<double>& net,
                                            const std::vector<stereoscale::ModelInput<double>>& inputs)
{
        std::vector<bool> out;
        for (const auto& in : inputs)
        {
                stereoscale::Network<double>::Workspace ws;
                net.forward(in, ws);
                for (std::size_t l = 0; l < net.config().layers.size(); ++l)
                {
                        if (net.config().layers[l].kind == stereoscale::LayerKind::Conv)
                        {
                                for (double v : ws.outputs[l])
                                {
                                        out.push_back(v > 0.0);
                                }
                        }
                }
        }
        return out;
}

struct GradientCheck
{
        // Largest relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) per tensor.
        std::map<std::string, double> relative_error;
        std::map<std::string, double> analytic_norm;
        // Perturbations that switched a ReLU; central differences there straddle a kink.
        int kink_crossings = 0;
};

// Backward against central differences of the mean squared error over `inputs`.
inline GradientCheck gradient_check(const stereoscale::ModelConfig& cfg, const stereoscale::ModelParams& params,
                                    const std::vector<stereoscale::ModelInput<double>>& inputs,
                                    const std::vector<double>& targets, double step)
{
        using Net = stereoscale::Network<double>;
        Net net(cfg, params);
        std::vector<const stereoscale::ModelInput<double>*> ptrs;
        for (const auto& in : inputs)
        {
                ptrs.push_back(&in);
        }
        auto grads = net.zero_gradients();
        stereoscale::batch_loss<double>(net, ptrs, targets, grads);
        const auto pattern = activation_pattern(net, inputs);

        auto loss = [&](Net& n) {
                double total = 0.0;
                for (std::size_t i = 0; i < inputs.size(); ++i)
                {
                        const double e = n.predict(inputs[i]) - targets[i];
                        total += e * e;
                }
                return total / static_cast<double>(inputs.size());
        };

        GradientCheck out;
        auto& values = net.parameters();
        for (std::size_t t = 0; t < values.size(); ++t)
        {
                double diff2 = 0.0;
                double a2 = 0.0;
                double n2 = 0.0;
                for (std::size_t i = 0; i < values[t].size(); ++i)
                {
                        const double saved = values[t][i];
                        values[t][i] = saved + step;
                        const double up = loss(net);
                        const bool up_same = activation_pattern(net, inputs) == pattern;
                        values[t][i] = saved - step;
                        const double down = loss(net);
                        const bool down_same = activation_pattern(net, inputs) == pattern;
                        values[t][i] = saved;
                        out.kink_crossings += !(up_same && down_same);
                        const double numeric = (up - down) / (2.0 * step);
                        const double analytic = grads[t][i];
                        diff2 += (analytic - numeric) * (analytic - numeric);
                        a2 += analytic * analytic;
                        n2 += numeric * numeric;
                }
                const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
                out.relative_error[params.tensors[t].name] = std::sqrt(diff2) / scale;
                out.analytic_norm[params.tensors[t].name] = std::sqrt(a2);
        }
        return out;
}

// First `count` seeds in [1, 200] whose single-sample check point is kink-free with every
// tensor receiving gradient.
inline std::vector<std::pair<std::uint64_t, GradientCheck>> kink_free_checks(int count, double step)
{
        const auto cfg = config();
        std::vector<std::pair<std::uint64_t, GradientCheck>> out;
        for (std::uint64_t seed = 1; seed <= 200 && static_cast<int>(out.size()) < count; ++seed)
        {
                const auto params = stereoscale::build_model(cfg, seed);
                auto check = gradient_check(cfg, params, {input<double>(cfg, 100 + seed)}, {2.0}, step);
                bool live = true;
                for (const auto& [name, norm] : check.analytic_norm)
                {
                        live = live && norm > 0.0;
                }
                if (check.kink_crossings == 0 && live)
                {
                        out.emplace_back(seed, std::move(check));
                }
        }
        return out;
}
}
