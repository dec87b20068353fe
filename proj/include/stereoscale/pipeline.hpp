#pragma once

#include "stereoscale/config.hpp"
#include "stereoscale/dataset.hpp"
#include "stereoscale/eval.hpp"
#include "stereoscale/model.hpp"
#include "stereoscale/scene.hpp"
#include "stereoscale/train.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace stereoscale
{
// Every tunable default of the pipeline, as `key = value` text. Unknown keys are rejected.
class PipelineConfig
{
public:
        PipelineConfig(); // defaults

        static PipelineConfig from_text(const std::string& text, const std::string& origin);
        static PipelineConfig from_file(const std::filesystem::path& path);

        // Validates `key` and `value` (parsing it as the key's type).
        void set(const std::string& key, const std::string& value);
        const std::string& get(const std::string& key) const;
        static const std::vector<std::string>& keys();

        std::string to_text() const;

        std::uint64_t seed(const std::string& stream) const; // "scene", "train_data", ...
        int resolution() const;

        ViewingGeometry geometry() const;
        DatasetConfig dataset_config() const;
        SceneLayout layout() const;
        Inventory inventory() const;
        TrainSetOptions train_set_options() const;
        TestSetOptions test_set_options() const;
        ModelConfig model_config() const;
        TrainConfig train_config() const;
        int eval_threads() const;

private:
        KeyValues values_;
};

// `run.log` body: the resolved config (itself a valid config file) with the command, flag
// overrides and output content hashes as comments.
struct RunLog
{
        std::string command;
        std::vector<std::string> overrides;
        std::vector<std::string> notes;
        std::vector<std::filesystem::path> outputs;

        void write(const std::filesystem::path& dir, const PipelineConfig& config) const;
};

struct PipelineResult
{
        std::filesystem::path root;
        SceneSpec train_scene;
        Manifest train;
        Manifest test;
        ModelParams params;
        EvalReport report;
        std::vector<EpochStats> history;
        double seconds_data = 0;
        double seconds_train = 0;
        double seconds_eval = 0;
};

// Scene, both datasets, training and evaluation under `root`, each step in its own directory.
PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& root,
                            const std::function<void(const std::string&)>& progress = {});
}
