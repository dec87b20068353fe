#pragma once

#include "stereoscale/dataset.hpp"
#include "stereoscale/model.hpp"
#include "stereoscale/network.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace stereoscale
{
// Manifests larger than this (as float inputs) are streamed from disk batch by batch.
inline constexpr double kInMemoryBudgetBytes = 1.5e9;

struct TrainConfig
{
        double learning_rate = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
        int batch_size = 16;
        int max_epochs = 200;
        // Stop when the best training RMSE (diopters) improved by less than this over the window.
        double early_stop_tolerance = 1e-4;
        int early_stop_window = 10;
        double divergence_loss = 1e6;
        std::uint64_t seed = 0;
        std::string loss = "mse_diopters";
        // Fixed-order gradient reduction. Off: workers add into one buffer as they finish.
        bool deterministic = true;
        int threads = 1;
        double memory_budget_bytes = kInMemoryBudgetBytes;

        void validate() const;
};

struct EpochStats
{
        int epoch = 0; // 1-based
        double mean_loss = 0;
        double rmse_diopters = 0;
        double seconds = 0;
};

struct TrainResult
{
        ModelParams params;
        std::vector<EpochStats> history;
        bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Targets are diopters (1 / distance).
TrainResult train(const ModelParams& initial, const ModelConfig& model, std::span<const ModelInput<float>> inputs,
                  std::span<const double> targets_diopters, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

TrainResult train(const ModelParams& initial, const ModelConfig& model, const Manifest& manifest,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Loads the first `limit` manifest samples as network inputs; checks resolution against the model.
std::vector<ModelInput<float>> load_inputs(const Manifest& manifest, const ModelConfig& model,
                                           std::size_t limit = static_cast<std::size_t>(-1));
}
