// Command-line driver for the scale-from-disparity pipeline.

#include "stereoscale/errors.hpp"
#include "stereoscale/eval.hpp"
#include "stereoscale/io.hpp"
#include "stereoscale/network.hpp"
#include "stereoscale/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace stereoscale;

namespace
{
struct Flags
{
        std::string config;
        std::optional<std::uint64_t> seed;
        std::string out;
        std::string scene;
        std::string canonical;
        std::string model;
        std::string data;
        std::string train_data;
        std::vector<double> distances;
        std::vector<double> factors;
        std::optional<int> resolution;
        std::vector<std::string> set;
        std::string variant = "full";
        bool flip = false;
};

void progress(const std::string& msg)
{
        std::cerr << "progress: " << msg << "\n";
}

void emit(const std::string& key, const std::string& value)
{
        std::cout << key << "=" << value << "\n";
}

void emit(const std::string& key, double value)
{
        emit(key, format_number(value));
}

// Defaults < --config < --set / dedicated flags. Returns the overrides applied.
PipelineConfig resolve_config(const Flags& f, std::vector<std::string>& overrides)
{
        PipelineConfig cfg = f.config.empty() ? PipelineConfig{} : PipelineConfig::from_file(f.config);
        auto apply = [&](const std::string& key, const std::string& value) {
                cfg.set(key, value);
                overrides.push_back(key + " = " + value);
        };
        for (const auto& kv : f.set)
        {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                {
                        throw ConfigError("--set expects key=value, got '" + kv + "'");
                }
                auto trim = [](std::string s) {
                        s.erase(0, s.find_first_not_of(' '));
                        s.erase(s.find_last_not_of(' ') + 1);
                        return s;
                };
                apply(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        if (f.seed)
        {
                apply("seed", std::to_string(*f.seed));
        }
        if (f.resolution)
        {
                apply("resolution", std::to_string(*f.resolution));
        }
        return cfg;
}

fs::path require_out(const Flags& f)
{
        if (f.out.empty())
        {
                throw InputError("--out is required");
        }
        fs::create_directories(f.out);
        return f.out;
}

void require(const std::string& value, const char* flag)
{
        if (value.empty())
        {
                throw InputError(std::string(flag) + " is required");
        }
}

void require_file(const std::string& path, const char* flag)
{
        require(path, flag);
        if (!fs::exists(path))
        {
                throw IoError(std::string(flag) + ": no such file or directory: " + path);
        }
}

// Model config from checkpoint metadata; rejects data at another resolution before any work.
ModelConfig checked_model(const ModelParams& params, int data_width, int data_height)
{
        const ModelConfig model = config_from_metadata(params.metadata);
        check_shapes(params, model);
        if (model.width != data_width || model.height != data_height)
        {
                throw ConfigError("model resolution " + std::to_string(model.width) + "x" + std::to_string(model.height) +
                                  " does not match data " + std::to_string(data_width) + "x" +
                                  std::to_string(data_height));
        }
        return model;
}

int cmd_scene_gen(const Flags& f, const PipelineConfig& cfg, RunLog& log)
{
        const fs::path out = require_out(f);
        const SceneSpec scene = generate_scene(cfg.seed("scene"), cfg.inventory(), "train", cfg.layout());
        save_scene(scene, (out / "scene.json").string());
        log.outputs.push_back(out / "scene.json");
        emit("scene", (out / "scene.json").string());
        emit("primitives", std::to_string(scene.primitives.size()));
        log.write(out, cfg);
        return 0;
}

int cmd_render(const Flags& f, const PipelineConfig& cfg, RunLog& log)
{
        require_file(f.scene, "--scene");
        if (f.distances.empty())
        {
                throw InputError("--distance is required");
        }
        const fs::path out = require_out(f);
        const SceneSpec scene = load_scene(f.scene);
        const ViewingGeometry geom = cfg.geometry();
        const SceneVariant variant{parse_removal(f.variant), f.flip};
        for (double d : f.distances)
        {
                Sample s = make_sample(scene, variant, geom, d);
                char name[64];
                std::snprintf(name, sizeof name, "render_%.4fm.qnd", d);
                s.sample_id = name;
                write_sample(s, out / name);
                log.outputs.push_back(out / name);
                std::size_t masked = 0;
                for (float m : s.mask.values())
                {
                        masked += m > 0.0f;
                }
                const std::string prefix = "d" + format_number(d) + ".";
                emit(prefix + "file", (out / name).string());
                emit(prefix + "masked_pixels", std::to_string(masked));
                emit(prefix + "mean_abs_disparity_rad", mean_abs_disparity(s));
        }
        log.write(out, cfg);
        return 0;
}

int cmd_build_train(const Flags& f, const PipelineConfig& cfg, RunLog& log)
{
        require_file(f.scene, "--scene");
        const fs::path out = require_out(f);
        const SceneSpec scene = load_scene(f.scene);
        log.notes.push_back("scene: " + f.scene + " fnv1a64=" + file_hash(f.scene));
        const Manifest m = build_training_set(scene, cfg.geometry(), cfg.seed("train_data"), out,
                                              cfg.dataset_config(), cfg.train_set_options());
        log.outputs.push_back(out / "manifest.csv");
        log.outputs.push_back(out / "manifest.cfg");
        emit("samples", std::to_string(m.rows.size()));
        emit("manifest", (out / "manifest.csv").string());
        log.write(out, cfg);
        return 0;
}

int cmd_build_test(const Flags& f, const PipelineConfig& cfg, RunLog& log)
{
        require_file(f.scene, "--scene");
        const fs::path out = require_out(f);
        const SceneSpec scene = load_scene(f.scene);
        log.notes.push_back("scene: " + f.scene + " fnv1a64=" + file_hash(f.scene));
        const Manifest m = build_test_set(scene, cfg.geometry(), cfg.seed("test_data"), out, cfg.dataset_config(),
                                          cfg.test_set_options(), cfg.layout());
        log.outputs.push_back(out / "manifest.csv");
        log.outputs.push_back(out / "manifest.cfg");
        for (int k = 0; k < cfg.test_set_options().n_scenes; ++k)
        {
                log.outputs.push_back(out / ("scene_" + std::to_string(k) + ".json"));
        }
        emit("samples", std::to_string(m.rows.size()));
        emit("manifest", (out / "manifest.csv").string());
        log.write(out, cfg);
        return 0;
}

int cmd_train(const Flags& f, const PipelineConfig& cfg, RunLog& log)
{
        require_file(f.data, "--data");
        const ModelConfig model = cfg.model_config();
        const TrainConfig train_cfg = cfg.train_config();
        const Manifest data = load_manifest(f.data);
        if (data.config.width != model.width || data.config.height != model.height)
        {
                throw ConfigError("model resolution " + std::to_string(model.width) + " does not match data " +
                                  std::to_string(data.config.width) + "x" + std::to_string(data.config.height));
        }
        const fs::path out = require_out(f);
        log.notes.push_back("data: " + f.data + " manifest fnv1a64=" + file_hash(fs::path(f.data) / "manifest.csv"));
        log.notes.push_back("layers: " + describe_layers(model.layers));
        const ModelParams initial = build_model(model, cfg.seed("init"));
        std::string history = "epoch,mean_loss,rmse_diopters,seconds\n";
        const TrainResult result = train(initial, model, data, train_cfg, [&](const EpochStats& s) {
                progress("epoch " + std::to_string(s.epoch) + " rmse_diopters=" + format_number(s.rmse_diopters));
                history += std::to_string(s.epoch) + "," + format_number(s.mean_loss) + "," +
                           format_number(s.rmse_diopters) + "," + format_number(s.seconds) + "\n";
        });
        save_params(result.params, out / "model.qnw");
        write_file_atomic(out / "history.csv", history);
        log.outputs.push_back(out / "model.qnw");
        emit("model", (out / "model.qnw").string());
        emit("epochs", std::to_string(result.history.size()));
        emit("final_loss", result.history.back().mean_loss);
        emit("stopped_early", result.stopped_early ? "true" : "false");
        log.write(out, cfg);
        return 0;
}

int cmd_eval(const Flags& f, const PipelineConfig& cfg, RunLog& log)
{
        require_file(f.model, "--model");
        require_file(f.data, "--data");
        const ModelParams params = load_params(f.model);
        const Manifest test = load_manifest(f.data);
        const ModelConfig model = checked_model(params, test.config.width, test.config.height);
        std::optional<Manifest> train_data;
        if (!f.train_data.empty())
        {
                require_file(f.train_data, "--train-data");
                train_data = load_manifest(f.train_data);
        }
        const fs::path out = require_out(f);
        log.notes.push_back("model: " + f.model + " fnv1a64=" + file_hash(f.model));
        log.notes.push_back("data: " + f.data + " manifest fnv1a64=" + file_hash(fs::path(f.data) / "manifest.csv"));
        const EvalReport report = evaluate(params, model, test, cfg.eval_threads());
        emit_report(report, out / "report.csv", out / "report.svg", test.config.d_min, test.config.d_max);
        log.outputs.push_back(out / "report.csv");
        log.outputs.push_back(out / "report.svg");
        std::cout << format_metrics(report.metrics);
        if (train_data)
        {
                const BaselineReport b = evaluate_baselines(*train_data, test);
                emit("baseline.mean_predictor_r2", b.mean_predictor_r2);
                emit("baseline.probe_diopters_r2", b.probe_diopters_r2);
                emit("baseline.probe_meters_r2", b.probe_meters_r2);
                emit("baseline.margin_r2", report.metrics.r2 - std::max(b.best_probe_r2(), b.mean_predictor_r2));
        }
        log.write(out, cfg);
        return 0;
}

int cmd_predict(const Flags& f, const PipelineConfig&, RunLog&)
{
        require_file(f.model, "--model");
        require_file(f.data, "--data");
        const ModelParams params = load_params(f.model);
        std::vector<Sample> samples;
        if (fs::is_directory(f.data))
        {
                const Manifest m = load_manifest(f.data);
                for (const auto& row : m.rows)
                {
                        samples.push_back(load_sample(m, row));
                }
        }
        else
        {
                samples.push_back(load_sample(f.data));
                samples.back().sample_id = fs::path(f.data).filename().string();
        }
        const ModelConfig model = checked_model(params, samples.front().disparity.width(),
                                                samples.front().disparity.height());
        const Network<float> net(model, params);
        for (const Sample& s : samples)
        {
                const double diopters = net.predict(prepare_input<float>(s, model));
                emit(s.sample_id + ".pred_m", diopters_to_meters(diopters));
        }
        return 0;
}

int cmd_oracle(const Flags& f, const PipelineConfig& cfg, RunLog& log)
{
        require_file(f.scene, "--scene");
        const SceneSpec observed_scene = load_scene(f.scene);
        const SceneSpec canonical = f.canonical.empty() ? observed_scene : load_scene(f.canonical);
        const ViewingGeometry geom = cfg.geometry();
        const SceneVariant variant{parse_removal(f.variant), f.flip};
        const std::vector<double> scales = f.distances.empty() ? std::vector<double>{0.25, 0.5, 1.0, 2.5} : f.distances;
        const ViewingGeometry vg = variant_geometry(geom, variant);
        double worst = 0.0;
        for (double s : scales)
        {
                const DisparityMap observed =
                        disparity_from_depth(vg, render_depth(observed_scene, variant, geom, s), s);
                const ScaleEstimate est = closed_form_scale(observed, canonical, variant, geom);
                const double rel = est.scale_m / s - 1.0;
                worst = std::max(worst, std::abs(rel));
                const std::string prefix = "s" + format_number(s) + ".";
                emit(prefix + "estimate_m", est.scale_m);
                emit(prefix + "rel_error", rel);
                emit(prefix + "usable_pixels", std::to_string(est.usable_pixels));
        }
        emit("max_abs_rel_error", worst);
        if (!f.out.empty())
        {
                log.write(require_out(f), cfg);
        }
        return 0;
}

int cmd_probe(const Flags& f, const PipelineConfig& cfg, RunLog& log)
{
        require_file(f.model, "--model");
        require_file(f.scene, "--scene");
        require_file(f.data, "--data");
        const ModelParams params = load_params(f.model);
        const Manifest test = load_manifest(f.data);
        const ModelConfig model = checked_model(params, test.config.width, test.config.height);
        const SceneSpec scene = load_scene(f.scene);
        std::vector<double> distances;
        for (const auto& row : test.rows)
        {
                if (row.scene_id == scene.scene_id)
                {
                        distances.push_back(row.distance_m);
                }
        }
        if (distances.empty())
        {
                throw DataError("no test rows use scene " + scene.scene_id);
        }
        const ViewingGeometry geom(test.config.width, test.config.height, test.config.ipd_m, test.config.fov_h_deg);
        const std::vector<double> factors = f.factors.empty() ? std::vector<double>{0.5, 1.0, 2.0} : f.factors;
        std::string csv = "factor,true_m,ratio\n";
        for (double factor : factors)
        {
                const HelmholtzReport r = helmholtz_probe(params, model, scene, geom, distances, factor);
                emit("factor" + format_number(factor) + ".median_ratio", r.median_ratio);
                for (std::size_t i = 0; i < r.ratios.size(); ++i)
                {
                        csv += format_number(factor) + "," + format_number(r.distances_m[i]) + "," +
                               format_number(r.ratios[i]) + "\n";
                }
        }
        if (!f.out.empty())
        {
                const fs::path out = require_out(f);
                write_file_atomic(out / "helmholtz.csv", csv);
                log.outputs.push_back(out / "helmholtz.csv");
                log.write(out, cfg);
        }
        return 0;
}

std::string one_line(std::string s)
{
        for (char& c : s)
        {
                if (c == '\n' || c == '\r')
                {
                        c = ' ';
                }
        }
        return s;
}
}

int main(int argc, char** argv)
{
        CLI::App app{"Scale from disparity: scenes, datasets, training, evaluation and probes"};
        app.require_subcommand(1);
        Flags f;

        auto common = [&](CLI::App* sub) {
                sub->add_option("--config", f.config, "Config file (key = value lines, # comments)");
                sub->add_option("--seed", f.seed, "Master seed");
                sub->add_option("--resolution", f.resolution, "Image width and height in pixels");
                sub->add_option("--set", f.set, "Config override key=value (repeatable)");
                sub->add_option("--out", f.out, "Output directory");
        };

        auto* scene = app.add_subcommand("scene", "Scene commands");
        scene->require_subcommand(1);
        auto* scene_gen = scene->add_subcommand("gen", "Generate the canonical training scene");
        common(scene_gen);

        auto* render = app.add_subcommand("render", "Render one disparity map per distance");
        common(render);
        render->add_option("--scene", f.scene, "Scene JSON");
        render->add_option("--distance", f.distances, "Fixation distance in meters (repeatable)");
        render->add_option("--variant", f.variant, "full, minus_near or minus_far");
        render->add_flag("--flip", f.flip, "Mirror horizontally");

        auto* dataset = app.add_subcommand("dataset", "Dataset commands");
        dataset->require_subcommand(1);
        auto* build_train = dataset->add_subcommand("build-train", "Training set: scene variants x distances");
        common(build_train);
        build_train->add_option("--scene", f.scene, "Scene JSON");
        auto* build_test = dataset->add_subcommand("build-test", "Test set on a rearranged scene");
        common(build_test);
        build_test->add_option("--scene", f.scene, "Training scene JSON");

        auto* train_cmd = app.add_subcommand("train", "Train the network");
        common(train_cmd);
        train_cmd->add_option("--data", f.data, "Training manifest directory");

        auto* eval_cmd = app.add_subcommand("eval", "Evaluate on a test manifest");
        common(eval_cmd);
        eval_cmd->add_option("--model", f.model, "Checkpoint");
        eval_cmd->add_option("--data", f.data, "Test manifest directory");
        eval_cmd->add_option("--train-data", f.train_data, "Training manifest; also fits and scores the baselines");

        auto* predict = app.add_subcommand("predict", "Predict distances for a sample file or manifest");
        common(predict);
        predict->add_option("--model", f.model, "Checkpoint");
        predict->add_option("--data", f.data, "Sample file or manifest directory");

        auto* oracle = app.add_subcommand("oracle", "Matched-scene closed-form scale estimate");
        common(oracle);
        oracle->add_option("--scene", f.scene, "Scene the observation is rendered from");
        oracle->add_option("--canonical", f.canonical, "Scene assumed by the estimator (default: --scene)");
        oracle->add_option("--distance", f.distances, "True scale in meters (repeatable; default sweep)");
        oracle->add_option("--variant", f.variant, "full, minus_near or minus_far");
        oracle->add_flag("--flip", f.flip, "Mirror horizontally");

        auto* probe = app.add_subcommand("probe-helmholtz", "Feed renders with scaled ipd to a trained model");
        common(probe);
        probe->add_option("--model", f.model, "Checkpoint");
        probe->add_option("--scene", f.scene, "Test scene JSON");
        probe->add_option("--data", f.data, "Test manifest (distances)");
        probe->add_option("--factor", f.factors, "ipd multiplier (repeatable; default 0.5 1 2)");

        try
        {
                app.parse(argc, argv);
        }
        catch (const CLI::CallForHelp& e)
        {
                return app.exit(e);
        }
        catch (const CLI::CallForAllHelp& e)
        {
                return app.exit(e);
        }
        catch (const CLI::ParseError& e)
        {
                std::cerr << "error=usage message=\"" << one_line(e.what()) << "\"\n";
                return 2;
        }

        try
        {
                std::vector<std::string> overrides;
                const PipelineConfig cfg = resolve_config(f, overrides);
                RunLog log;
                for (int i = 0; i < argc; ++i)
                {
                        log.command += (i ? " " : "") + std::string(argv[i]);
                }
                log.overrides = overrides;
                if (!f.config.empty())
                {
                        log.notes.push_back("config file: " + f.config);
                }
                const auto start = std::chrono::steady_clock::now();
                int rc = 0;
                if (scene_gen->parsed())
                        rc = cmd_scene_gen(f, cfg, log);
                else if (render->parsed())
                        rc = cmd_render(f, cfg, log);
                else if (build_train->parsed())
                        rc = cmd_build_train(f, cfg, log);
                else if (build_test->parsed())
                        rc = cmd_build_test(f, cfg, log);
                else if (train_cmd->parsed())
                        rc = cmd_train(f, cfg, log);
                else if (eval_cmd->parsed())
                        rc = cmd_eval(f, cfg, log);
                else if (predict->parsed())
                        rc = cmd_predict(f, cfg, log);
                else if (oracle->parsed())
                        rc = cmd_oracle(f, cfg, log);
                else if (probe->parsed())
                        rc = cmd_probe(f, cfg, log);
                const double secs =
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                char took[32];
                std::snprintf(took, sizeof took, "done in %.1f s", secs);
                progress(took);
                return rc;
        }
        catch (const Error& e)
        {
                std::cerr << "error=" << e.kind() << " message=\"" << one_line(e.what()) << "\"\n";
                return e.kind() == "config" || e.kind() == "input" ? 2 : 1;
        }
        catch (const std::exception& e)
        {
                std::cerr << "error=internal message=\"" << one_line(e.what()) << "\"\n";
                return 1;
        }
}
