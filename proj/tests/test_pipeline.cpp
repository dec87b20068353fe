#include "stereoscale/errors.hpp"
#include "stereoscale/io.hpp"
#include "stereoscale/pipeline.hpp"

#include <doctest.h>

#include <filesystem>

using namespace stereoscale;
namespace fs = std::filesystem;

TEST_CASE("defaults resolve to the built-in configuration")
{
        const PipelineConfig cfg;
        CHECK(cfg.resolution() == 256);
        CHECK(cfg.seed("scene") == 1);
        CHECK(cfg.dataset_config() == DatasetConfig{});
        CHECK(cfg.train_set_options().n_distances == 100);
        CHECK(cfg.test_set_options().n_samples == 200);
        CHECK(cfg.model_config() == default_model_config(256, 256));
        const TrainConfig t = cfg.train_config();
        CHECK(t.learning_rate == 1e-3);
        CHECK(t.batch_size == 16);
        CHECK(t.max_epochs == 200);
        CHECK(t.deterministic);
}

TEST_CASE("keys and values are validated")
{
        PipelineConfig cfg;
        CHECK_THROWS_WITH_AS(cfg.set("trian.batch_size", "8"), doctest::Contains("unknown config key"), ConfigError);
        CHECK_THROWS_AS(cfg.set("train.batch_size", "eight"), ConfigError);
        CHECK_THROWS_AS(cfg.set("d_min", "near"), ConfigError);
        CHECK_THROWS_AS(cfg.set("train.deterministic", "maybe"), ConfigError);
        CHECK_THROWS_AS(cfg.set("model.channels", "8,16"), ConfigError);
        CHECK_THROWS_AS(cfg.set("seed", ""), ConfigError);
        CHECK_THROWS_AS(cfg.get("nope"), ConfigError);
        CHECK_THROWS_AS(cfg.seed("nope"), ConfigError);
        CHECK_THROWS_AS(PipelineConfig::from_text("resolution = 256\nresolution = 512\n", "t"), ConfigError);
        cfg.set("resolution", "512");
        CHECK_THROWS_WITH_AS(cfg.model_config(), doctest::Contains("supported widths"), ConfigError);
}

TEST_CASE("stream seeds inherit the master seed unless set")
{
        PipelineConfig cfg;
        cfg.set("seed", "42");
        cfg.set("seed.init", "7");
        CHECK(cfg.seed("scene") == 42);
        CHECK(cfg.seed("train_data") == 42);
        CHECK(cfg.seed("init") == 7);
        CHECK(cfg.train_config().seed == 42);
}

TEST_CASE("text round trip")
{
        PipelineConfig cfg;
        cfg.set("train.max_epochs", "12");
        cfg.set("scene.object_scale", "1.25");
        cfg.set("model.layers", describe_layers(desk_layers_256()));
        const PipelineConfig back = PipelineConfig::from_text(cfg.to_text(), "roundtrip");
        for (const auto& key : PipelineConfig::keys())
        {
                CHECK(back.get(key) == cfg.get(key));
        }
        CHECK(back.model_config() == cfg.model_config());
        CHECK(back.layout().object_scale == 1.25);
}

TEST_CASE("a tiny end-to-end run writes every artifact and a reloadable run.log")
{
        const fs::path root = fs::temp_directory_path() / "stereoscale_test_pipeline";
        fs::remove_all(root);
        PipelineConfig cfg;
        cfg.set("train.n_distances", "2");
        cfg.set("test.n_samples", "4");
        cfg.set("train.max_epochs", "1");
        const PipelineResult r = run_pipeline(cfg, root);
        CHECK(r.train.rows.size() == 12);
        CHECK(r.test.rows.size() == 4);
        CHECK(r.history.size() == 1);
        CHECK(r.report.rows.size() == 4);
        for (const char* file : {"scene/scene.json", "train/manifest.csv", "test/manifest.csv", "model/model.qnw",
                                 "eval/report.csv", "eval/report.svg"})
        {
                CHECK(fs::exists(root / file));
        }
        for (const char* dir : {"scene", "train", "test", "model", "eval"})
        {
                const PipelineConfig logged = PipelineConfig::from_file(root / dir / "run.log");
                CHECK(logged.to_text() == cfg.to_text());
        }
        const std::string log = read_file(root / "model" / "run.log");
        CHECK(log.find("# output: model.qnw fnv1a64=" + file_hash(root / "model" / "model.qnw")) != std::string::npos);
        CHECK(load_params(root / "model" / "model.qnw", cfg.model_config()).tensors == r.params.tensors);
}
