#include "stereoscale/pipeline.hpp"

#include "stereoscale/errors.hpp"
#include "stereoscale/io.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace stereoscale
{
namespace
{
enum class KeyType
{
        Seed,
        Int,
        Double,
        Bool,
        Text,
};

struct KeyDef
{
        const char* key;
        const char* default_value;
        KeyType type;
};

// Sub-seeds default to `seed` when left empty.
constexpr KeyDef kKeys[] = {
        {"seed", "1", KeyType::Seed},
        {"seed.scene", "", KeyType::Seed},
        {"seed.train_data", "", KeyType::Seed},
        {"seed.test_data", "", KeyType::Seed},
        {"seed.init", "", KeyType::Seed},
        {"seed.train", "", KeyType::Seed},
        {"ipd_m", "0.064", KeyType::Double},
        {"fov_h_deg", "56", KeyType::Double},
        {"resolution", "256", KeyType::Int},
        {"d_min", "0.25", KeyType::Double},
        {"d_max", "2.5", KeyType::Double},
        {"train.n_distances", "100", KeyType::Int},
        {"test.n_samples", "200", KeyType::Int},
        {"test.n_scenes", "1", KeyType::Int},
        {"scene.near_count", "8", KeyType::Int},
        {"scene.far_count", "8", KeyType::Int},
        {"scene.near_min", "0.55", KeyType::Double},
        {"scene.near_max", "0.95", KeyType::Double},
        {"scene.far_min", "1.05", KeyType::Double},
        {"scene.far_max", "2.2", KeyType::Double},
        {"scene.min_surface_distance", "0.62", KeyType::Double},
        {"scene.ground_height", "0.4", KeyType::Double},
        {"scene.object_scale", "1.5", KeyType::Double},
        {"scene.height_scale", "0.8", KeyType::Double},
        {"scene.depth_clustering", "1", KeyType::Double},
        {"scene.max_top", "-0.02", KeyType::Double},
        {"scene.max_attempts", "2000", KeyType::Int},
        {"model.channels", "8,16,16", KeyType::Text},
        {"model.layers", "auto", KeyType::Text},
        {"model.disparity_scale", "0.1", KeyType::Double},
        {"train.learning_rate", "0.001", KeyType::Double},
        {"train.beta1", "0.9", KeyType::Double},
        {"train.beta2", "0.999", KeyType::Double},
        {"train.epsilon", "1e-08", KeyType::Double},
        {"train.batch_size", "16", KeyType::Int},
        {"train.max_epochs", "200", KeyType::Int},
        {"train.early_stop_tolerance", "0.0001", KeyType::Double},
        {"train.early_stop_window", "10", KeyType::Int},
        {"train.loss", "mse_diopters", KeyType::Text},
        {"train.deterministic", "true", KeyType::Bool},
        {"train.threads", "1", KeyType::Int},
        {"eval.threads", "1", KeyType::Int},
};

const KeyDef* find_key(const std::string& key)
{
        for (const KeyDef& def : kKeys)
        {
                if (key == def.key)
                {
                        return &def;
                }
        }
        return nullptr;
}

std::array<int, 3> parse_channels(const std::string& text)
{
        std::array<int, 3> out{};
        std::istringstream in(text);
        std::string item;
        int n = 0;
        while (std::getline(in, item, ','))
        {
                if (n == 3)
                {
                        n = 4;
                        break;
                }
                try
                {
                        std::size_t used = 0;
                        out[n] = std::stoi(item, &used);
                        if (used != item.size() || out[n] < 1)
                        {
                                throw std::invalid_argument(item);
                        }
                }
                catch (const std::logic_error&)
                {
                        throw ConfigError("model.channels: '" + text + "' is not three positive integers");
                }
                ++n;
        }
        if (n != 3)
        {
                throw ConfigError("model.channels: '" + text + "' is not three positive integers");
        }
        return out;
}
}

PipelineConfig::PipelineConfig()
{
        for (const KeyDef& def : kKeys)
        {
                values_.set(def.key, def.default_value);
        }
}

const std::vector<std::string>& PipelineConfig::keys()
{
        static const std::vector<std::string> names = [] {
                std::vector<std::string> out;
                for (const KeyDef& def : kKeys)
                {
                        out.emplace_back(def.key);
                }
                return out;
        }();
        return names;
}

void PipelineConfig::set(const std::string& key, const std::string& value)
{
        const KeyDef* def = find_key(key);
        if (def == nullptr)
        {
                throw ConfigError("unknown config key '" + key + "'");
        }
        KeyValues probe;
        probe.set(key, value);
        switch (def->type)
        {
        case KeyType::Seed:
                if (!(value.empty() && key != "seed"))
                {
                        probe.get_u64(key);
                }
                break;
        case KeyType::Int:
                probe.get_int(key);
                break;
        case KeyType::Double:
                probe.get_double(key);
                break;
        case KeyType::Bool:
                probe.get_bool(key);
                break;
        case KeyType::Text:
                if (key == "model.channels")
                {
                        parse_channels(value);
                }
                break;
        }
        values_.set(key, value);
}

const std::string& PipelineConfig::get(const std::string& key) const
{
        if (find_key(key) == nullptr)
        {
                throw ConfigError("unknown config key '" + key + "'");
        }
        return values_.get(key);
}

PipelineConfig PipelineConfig::from_text(const std::string& text, const std::string& origin)
{
        const KeyValues kv = KeyValues::parse(text, origin);
        PipelineConfig cfg;
        for (const auto& [key, value] : kv.entries())
        {
                try
                {
                        cfg.set(key, value);
                }
                catch (const ConfigError& e)
                {
                        throw ConfigError(origin + ": " + e.what());
                }
        }
        return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::filesystem::path& path)
{
        return from_text(read_file(path), path.string());
}

std::string PipelineConfig::to_text() const
{
        return values_.to_string();
}

std::uint64_t PipelineConfig::seed(const std::string& stream) const
{
        const std::string key = "seed." + stream;
        if (find_key(key) == nullptr)
        {
                throw ConfigError("unknown seed stream '" + stream + "'");
        }
        return values_.get(key).empty() ? values_.get_u64("seed") : values_.get_u64(key);
}

int PipelineConfig::resolution() const
{
        return values_.get_int("resolution");
}

ViewingGeometry PipelineConfig::geometry() const
{
        try
        {
                return ViewingGeometry(resolution(), resolution(), values_.get_double("ipd_m"),
                                       values_.get_double("fov_h_deg"));
        }
        catch (const Error& e)
        {
                throw ConfigError(std::string("viewing geometry: ") + e.what());
        }
}

DatasetConfig PipelineConfig::dataset_config() const
{
        DatasetConfig c;
        c.ipd_m = values_.get_double("ipd_m");
        c.fov_h_deg = values_.get_double("fov_h_deg");
        c.width = resolution();
        c.height = resolution();
        c.d_min = values_.get_double("d_min");
        c.d_max = values_.get_double("d_max");
        return c;
}

SceneLayout PipelineConfig::layout() const
{
        SceneLayout l;
        l.near_min = values_.get_double("scene.near_min");
        l.near_max = values_.get_double("scene.near_max");
        l.far_min = values_.get_double("scene.far_min");
        l.far_max = values_.get_double("scene.far_max");
        l.min_surface_distance = values_.get_double("scene.min_surface_distance");
        l.ground_height = values_.get_double("scene.ground_height");
        l.object_scale = values_.get_double("scene.object_scale");
        l.height_scale = values_.get_double("scene.height_scale");
        l.depth_clustering = values_.get_double("scene.depth_clustering");
        l.max_top = values_.get_double("scene.max_top");
        l.max_attempts = values_.get_int("scene.max_attempts");
        l.fov_h_deg = values_.get_double("fov_h_deg");
        l.width = resolution();
        l.height = resolution();
        return l;
}

Inventory PipelineConfig::inventory() const
{
        return {values_.get_int("scene.near_count"), values_.get_int("scene.far_count")};
}

TrainSetOptions PipelineConfig::train_set_options() const
{
        return {values_.get_int("train.n_distances")};
}

TestSetOptions PipelineConfig::test_set_options() const
{
        return {values_.get_int("test.n_samples"), values_.get_int("test.n_scenes")};
}

ModelConfig PipelineConfig::model_config() const
{
        ModelConfig cfg;
        cfg.width = resolution();
        cfg.height = resolution();
        cfg.fov_h_deg = values_.get_double("fov_h_deg");
        cfg.stage_channels = parse_channels(values_.get("model.channels"));
        cfg.disparity_scale = values_.get_double("model.disparity_scale");
        const std::string& layers = values_.get("model.layers");
        cfg.layers = layers == "auto" ? plan_layers(cfg.width) : parse_layers(layers);
        validate(cfg);
        return cfg;
}

TrainConfig PipelineConfig::train_config() const
{
        TrainConfig t;
        t.learning_rate = values_.get_double("train.learning_rate");
        t.beta1 = values_.get_double("train.beta1");
        t.beta2 = values_.get_double("train.beta2");
        t.epsilon = values_.get_double("train.epsilon");
        t.batch_size = values_.get_int("train.batch_size");
        t.max_epochs = values_.get_int("train.max_epochs");
        t.early_stop_tolerance = values_.get_double("train.early_stop_tolerance");
        t.early_stop_window = values_.get_int("train.early_stop_window");
        t.loss = values_.get("train.loss");
        t.deterministic = values_.get_bool("train.deterministic");
        t.threads = values_.get_int("train.threads");
        t.seed = seed("train");
        t.validate();
        return t;
}

int PipelineConfig::eval_threads() const
{
        const int n = values_.get_int("eval.threads");
        if (n < 1)
        {
                throw ConfigError("eval.threads must be >= 1");
        }
        return n;
}

void RunLog::write(const std::filesystem::path& dir, const PipelineConfig& config) const
{
        std::string text = "# command: " + command + "\n";
        text += "# precedence: defaults < --config file < command-line flags\n";
        for (const auto& o : overrides)
        {
                text += "# override: " + o + "\n";
        }
        for (const auto& n : notes)
        {
                text += "# " + n + "\n";
        }
        for (const char* stream : {"scene", "train_data", "test_data", "init", "train"})
        {
                text += "# resolved seed." + std::string(stream) + ": " + std::to_string(config.seed(stream)) + "\n";
        }
        for (const auto& path : outputs)
        {
                std::error_code ec;
                const auto rel = std::filesystem::relative(path, dir, ec);
                text += "# output: " + (ec ? path : rel).string() + " fnv1a64=" + file_hash(path) + "\n";
        }
        text += config.to_text();
        write_file_atomic(dir / "run.log", text);
}

PipelineResult run_pipeline(const PipelineConfig& config, const std::filesystem::path& root,
                            const std::function<void(const std::string&)>& progress)
{
        using clock = std::chrono::steady_clock;
        auto say = [&](const std::string& msg) {
                if (progress)
                {
                        progress(msg);
                }
        };
        auto seconds_since = [](clock::time_point t) {
                return std::chrono::duration<double>(clock::now() - t).count();
        };
        const ViewingGeometry geom = config.geometry();
        const ModelConfig model = config.model_config();
        const TrainConfig train_cfg = config.train_config();

        PipelineResult r;
        r.root = root;
        std::filesystem::create_directories(root / "scene");
        const auto t_data = clock::now();
        say("generating scene");
        r.train_scene = generate_scene(config.seed("scene"), config.inventory(), "train", config.layout());
        save_scene(r.train_scene, (root / "scene" / "scene.json").string());
        RunLog{"scene gen", {}, {}, {root / "scene" / "scene.json"}}.write(root / "scene", config);

        say("building training set");
        r.train = build_training_set(r.train_scene, geom, config.seed("train_data"), root / "train",
                                     config.dataset_config(), config.train_set_options());
        RunLog{"dataset build-train", {}, {}, {root / "train" / "manifest.csv"}}.write(root / "train", config);
        say("building test set");
        r.test = build_test_set(r.train_scene, geom, config.seed("test_data"), root / "test", config.dataset_config(),
                                config.test_set_options(), config.layout());
        RunLog{"dataset build-test", {}, {}, {root / "test" / "manifest.csv"}}.write(root / "test", config);
        r.seconds_data = seconds_since(t_data);

        const auto t_train = clock::now();
        say("training");
        const ModelParams initial = build_model(model, config.seed("init"));
        TrainResult trained = train(initial, model, r.train, train_cfg, [&](const EpochStats& s) {
                say("epoch " + std::to_string(s.epoch) + " rmse_diopters=" + format_number(s.rmse_diopters));
        });
        r.params = std::move(trained.params);
        r.history = std::move(trained.history);
        std::filesystem::create_directories(root / "model");
        save_params(r.params, root / "model" / "model.qnw");
        RunLog{"train", {}, {}, {root / "model" / "model.qnw"}}.write(root / "model", config);
        r.seconds_train = seconds_since(t_train);

        const auto t_eval = clock::now();
        say("evaluating");
        r.report = evaluate(r.params, model, r.test, config.eval_threads());
        std::filesystem::create_directories(root / "eval");
        const DatasetConfig dc = config.dataset_config();
        emit_report(r.report, root / "eval" / "report.csv", root / "eval" / "report.svg", dc.d_min, dc.d_max);
        RunLog{"eval", {}, {}, {root / "eval" / "report.csv", root / "eval" / "report.svg"}}.write(root / "eval",
                                                                                               config);
        r.seconds_eval = seconds_since(t_eval);
        return r;
}
}
