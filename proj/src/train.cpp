#include "stereoscale/train.hpp"

#include "stereoscale/errors.hpp"
#include "stereoscale/random.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

namespace stereoscale
{
namespace
{
class Adam
{
public:
        Adam(const TrainConfig& cfg, const ParamVectors<float>& shape) : cfg_(cfg)
        {
                for (const auto& p : shape)
                {
                        m_.emplace_back(p.size(), 0.0);
                        v_.emplace_back(p.size(), 0.0);
                }
        }

        void step(ParamVectors<float>& params, const ParamVectors<float>& grads)
        {
                ++t_;
                const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
                const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
                for (std::size_t i = 0; i < params.size(); ++i)
                {
                        for (std::size_t j = 0; j < params[i].size(); ++j)
                        {
                                const double g = grads[i][j];
                                double& m = m_[i][j];
                                double& v = v_[i][j];
                                m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
                                v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
                                const double update = cfg_.learning_rate * (m / c1) / (std::sqrt(v / c2) + cfg_.epsilon);
                                params[i][j] = static_cast<float>(params[i][j] - update);
                        }
                }
        }

private:
        const TrainConfig& cfg_;
        std::vector<std::vector<double>> m_;
        std::vector<std::vector<double>> v_;
        int t_ = 0;
};

void add_into(ParamVectors<float>& dst, const ParamVectors<float>& src)
{
        for (std::size_t i = 0; i < dst.size(); ++i)
        {
                for (std::size_t j = 0; j < dst[i].size(); ++j)
                {
                        dst[i][j] += src[i][j];
                }
        }
}

void zero(ParamVectors<float>& g)
{
        for (auto& v : g)
        {
                std::fill(v.begin(), v.end(), 0.0f);
        }
}

// Mean loss over the batch; gradients of that mean land in `grads`.
double batch_step(const Network<float>& net, std::span<const ModelInput<float>* const> inputs,
                  std::span<const double> targets, const TrainConfig& cfg, ParamVectors<float>& grads,
                  std::vector<ParamVectors<float>>& slots)
{
        const std::size_t n = inputs.size();
        const float inv_n = 1.0f / static_cast<float>(n);
        std::vector<double> sq(n, 0.0);
        zero(grads);

        auto run_sample = [&](std::size_t k, typename Network<float>::Workspace& ws, ParamVectors<float>& out) {
                const float err = net.forward(*inputs[k], ws) - static_cast<float>(targets[k]);
                sq[k] = static_cast<double>(err) * err;
                net.backward(2.0f * err * inv_n, ws, out);
        };

        const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(n)));
        if (threads == 1)
        {
                // Same arithmetic as the threaded deterministic path: each sample's gradient is formed
                // on its own and then added in sample order.
                typename Network<float>::Workspace ws;
                if (slots.empty())
                {
                        slots.push_back(net.zero_gradients());
                }
                for (std::size_t k = 0; k < n; ++k)
                {
                        zero(slots[0]);
                        run_sample(k, ws, slots[0]);
                        add_into(grads, slots[0]);
                }
        }
        else
        {
                std::mutex lock;
                std::exception_ptr failure;
                if (cfg.deterministic && slots.size() < n)
                {
                        slots.resize(n, net.zero_gradients());
                }
                std::vector<std::thread> pool;
                for (int t = 0; t < threads; ++t)
                {
                        pool.emplace_back([&, t] {
                                try
                                {
                                        typename Network<float>::Workspace ws;
                                        ParamVectors<float> local = net.zero_gradients();
                                        for (std::size_t k = t; k < n; k += threads)
                                        {
                                                if (cfg.deterministic)
                                                {
                                                        zero(slots[k]);
                                                        run_sample(k, ws, slots[k]);
                                                }
                                                else
                                                {
                                                        zero(local);
                                                        run_sample(k, ws, local);
                                                        std::lock_guard guard(lock);
                                                        add_into(grads, local);
                                                }
                                        }
                                }
                                catch (...)
                                {
                                        std::lock_guard guard(lock);
                                        failure = std::current_exception();
                                }
                        });
                }
                for (auto& th : pool)
                {
                        th.join();
                }
                if (failure)
                {
                        std::rethrow_exception(failure);
                }
                if (cfg.deterministic)
                {
                        for (std::size_t k = 0; k < n; ++k)
                        {
                                add_into(grads, slots[k]);
                        }
                }
        }
        return std::accumulate(sq.begin(), sq.end(), 0.0) / static_cast<double>(n);
}
}

void TrainConfig::validate() const
{
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        {
                throw ConfigError("learning_rate must be positive");
        }
        if (batch_size < 1)
        {
                throw ConfigError("batch_size must be >= 1");
        }
        if (max_epochs < 1)
        {
                throw ConfigError("max_epochs must be >= 1");
        }
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        {
                throw ConfigError("Adam moment decays must lie in [0, 1)");
        }
        if (!(epsilon > 0.0) || early_stop_tolerance < 0.0 || early_stop_window < 1)
        {
                throw ConfigError("epsilon, early-stop tolerance or window out of range");
        }
        if (loss != "mse_diopters")
        {
                throw ConfigError("unsupported loss '" + loss + "' (only mse_diopters)");
        }
        if (threads < 1)
        {
                throw ConfigError("threads must be >= 1");
        }
}

namespace
{
// Fills `storage` (when streaming) and returns one input pointer per batch index.
using BatchFetch = std::function<std::vector<const ModelInput<float>*>(std::span<const std::size_t> batch,
                                                                       std::vector<ModelInput<float>>& storage)>;

TrainResult train_loop(const ModelParams& initial, const ModelConfig& model, std::size_t count,
                       std::span<const double> targets_diopters, const BatchFetch& fetch, const TrainConfig& cfg,
                       const EpochCallback& on_epoch)
{
        cfg.validate();
        if (count == 0 || count != targets_diopters.size())
        {
                throw InputError("training needs matching, non-empty inputs and targets");
        }
        Network<float> net(model, initial);
        std::vector<ModelInput<float>> storage;
        std::vector<double> batch_targets;
        Adam adam(cfg, net.parameters());
        ParamVectors<float> grads = net.zero_gradients();
        std::vector<ParamVectors<float>> slots;

        std::vector<std::size_t> order(count);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

        TrainResult result;
        std::vector<double> best_so_far;
        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch)
        {
                const auto start = std::chrono::steady_clock::now();
                shuffle_rng.shuffle(order.begin(), order.end());
                double sum_sq = 0.0;
                int batch_index = 0;
                for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++batch_index)
                {
                        const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - first);
                        const std::span<const std::size_t> batch(order.data() + first, count);
                        const auto batch_inputs = fetch(batch, storage);
                        batch_targets.clear();
                        for (std::size_t idx : batch)
                        {
                                batch_targets.push_back(targets_diopters[idx]);
                        }
                        double loss = 0.0;
                        try
                        {
                                loss = batch_step(net, batch_inputs, batch_targets, cfg, grads, slots);
                        }
                        catch (const NumericalError& e)
                        {
                                throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                                                     std::to_string(batch_index) + ": " + e.what());
                        }
                        if (!std::isfinite(loss) || loss > cfg.divergence_loss)
                        {
                                throw NumericalError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                                                     std::to_string(batch_index) + ": loss " + format_number(loss));
                        }
                        sum_sq += loss * static_cast<double>(count);
                        adam.step(net.parameters(), grads);
                }
                EpochStats stats;
                stats.epoch = epoch;
                stats.mean_loss = sum_sq / static_cast<double>(order.size());
                stats.rmse_diopters = std::sqrt(stats.mean_loss);
                stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                result.history.push_back(stats);
                if (on_epoch)
                {
                        on_epoch(stats);
                }
                best_so_far.push_back(best_so_far.empty() ? stats.rmse_diopters
                                                          : std::min(best_so_far.back(), stats.rmse_diopters));
                const int w = cfg.early_stop_window;
                if (epoch > w && best_so_far[epoch - 1 - w] - best_so_far[epoch - 1] < cfg.early_stop_tolerance)
                {
                        result.stopped_early = true;
                        break;
                }
        }

        result.params = initial;
        net.store(result.params);
        KeyValues& meta = result.params.metadata;
        meta.set("epochs", std::to_string(result.history.size()));
        meta.set("final_loss", format_number(result.history.back().mean_loss));
        meta.set("train.seed", std::to_string(cfg.seed));
        meta.set("train.learning_rate", format_number(cfg.learning_rate));
        meta.set("train.beta1", format_number(cfg.beta1));
        meta.set("train.beta2", format_number(cfg.beta2));
        meta.set("train.epsilon", format_number(cfg.epsilon));
        meta.set("train.batch_size", std::to_string(cfg.batch_size));
        meta.set("train.max_epochs", std::to_string(cfg.max_epochs));
        meta.set("train.early_stop_tolerance", format_number(cfg.early_stop_tolerance));
        meta.set("train.early_stop_window", std::to_string(cfg.early_stop_window));
        meta.set("train.loss", cfg.loss);
        meta.set("train.deterministic", cfg.deterministic ? "true" : "false");
        meta.set("train.stopped_early", result.stopped_early ? "true" : "false");
        return result;
}
}

TrainResult train(const ModelParams& initial, const ModelConfig& model, std::span<const ModelInput<float>> inputs,
                  std::span<const double> targets_diopters, const TrainConfig& cfg, const EpochCallback& on_epoch)
{
        const BatchFetch fetch = [&](std::span<const std::size_t> batch, std::vector<ModelInput<float>>&) {
                std::vector<const ModelInput<float>*> out;
                for (std::size_t idx : batch)
                {
                        out.push_back(&inputs[idx]);
                }
                return out;
        };
        return train_loop(initial, model, inputs.size(), targets_diopters, fetch, cfg, on_epoch);
}

std::vector<ModelInput<float>> load_inputs(const Manifest& manifest, const ModelConfig& model, std::size_t limit)
{
        if (manifest.rows.empty())
        {
                throw DataError("manifest " + manifest.root.string() + " is empty");
        }
        if (manifest.config.width != model.width || manifest.config.height != model.height)
        {
                throw ConfigError("data resolution " + std::to_string(manifest.config.width) + "x" +
                                  std::to_string(manifest.config.height) + " does not match model " +
                                  std::to_string(model.width) + "x" + std::to_string(model.height));
        }
        std::vector<ModelInput<float>> inputs;
        const std::size_t n = std::min(limit, manifest.rows.size());
        inputs.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
        {
                inputs.push_back(prepare_input<float>(load_sample(manifest, manifest.rows[i]), model));
        }
        return inputs;
}

TrainResult train(const ModelParams& initial, const ModelConfig& model, const Manifest& manifest,
                  const TrainConfig& cfg, const EpochCallback& on_epoch)
{
        std::vector<double> targets;
        for (const auto& row : manifest.rows)
        {
                targets.push_back(1.0 / row.distance_m);
        }
        const double bytes = 2.0 * sizeof(float) * model.width * model.height * static_cast<double>(manifest.rows.size());
        if (bytes <= cfg.memory_budget_bytes)
        {
                const auto inputs = load_inputs(manifest, model);
                return train(initial, model, inputs, targets, cfg, on_epoch);
        }
        // Too large to hold: read each batch from disk.
        load_inputs(manifest, model, 1);
        const BatchFetch fetch = [&](std::span<const std::size_t> batch, std::vector<ModelInput<float>>& storage) {
                storage.clear();
                for (std::size_t idx : batch)
                {
                        storage.push_back(prepare_input<float>(load_sample(manifest, manifest.rows[idx]), model));
                }
                std::vector<const ModelInput<float>*> out;
                for (const auto& in : storage)
                {
                        out.push_back(&in);
                }
                return out;
        };
        return train_loop(initial, model, manifest.rows.size(), targets, fetch, cfg, on_epoch);
}
}
