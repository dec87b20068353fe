#pragma once

#include "stereoscale/geometry.hpp"
#include "stereoscale/scene.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stereoscale
{
// One network input: disparity (radians) and mask (0/1) planes plus the fixation distance label.
struct Sample
{
        std::string sample_id;
        Grid<float> disparity;
        Grid<float> mask;
        double label_distance_m = 0;
        SceneVariant variant;
        std::string scene_id;
        int distance_index = 0;
};

struct ManifestRow
{
        std::string id;
        std::string path; // relative to the manifest root
        double distance_m = 0;
        SceneVariant variant;
        std::string scene_id;
        std::uint64_t seed = 0;
        int distance_index = 0;
};

struct DatasetConfig
{
        double ipd_m = ViewingGeometry::kDefaultIpd;
        double fov_h_deg = ViewingGeometry::kDefaultFovDeg;
        int width = 256;
        int height = 256;
        double d_min = 0.25;
        double d_max = 2.5;

        bool operator==(const DatasetConfig&) const = default;
};

struct Manifest
{
        std::filesystem::path root;
        std::string kind; // "train" or "test"
        std::uint64_t seed = 0;
        DatasetConfig config;
        std::vector<ManifestRow> rows;

        std::filesystem::path sample_path(const ManifestRow& row) const
        {
                return root / row.path;
        }
};

inline constexpr char kManifestHeader[] = "id,path,distance_m,variant,flip,scene_id,seed";

// Uniform in diopters over [1/d_max, 1/d_min], returned as meters.
std::vector<double> sample_distances(std::uint64_t seed, int n, double d_min, double d_max);

// Disparity map at fixation distance = label for one scene variant.
Sample make_sample(const SceneSpec& scene, SceneVariant variant, const ViewingGeometry& geom, double distance_m);
// Same, reusing a canonical render of the variant's removal.
Sample make_sample(const CanonicalRender& canonical, const SceneSpec& scene, SceneVariant variant,
                   const ViewingGeometry& geom, double distance_m);

void write_sample(const Sample& sample, const std::filesystem::path& path);
Sample load_sample(const std::filesystem::path& path);
// Loads the file and checks it against the manifest's resolution and label.
Sample load_sample(const Manifest& manifest, const ManifestRow& row);

struct TrainSetOptions
{
        int n_distances = 100;
};

struct TestSetOptions
{
        int n_samples = 200;
        int n_scenes = 1; // rearranged layouts; samples are split round-robin
};

Manifest build_training_set(const SceneSpec& scene, const ViewingGeometry& geom, std::uint64_t seed,
                            const std::filesystem::path& out_dir, const DatasetConfig& config = {},
                            const TrainSetOptions& options = {});

// Rearranged layouts of the training scene used by the test set; also saved as scene_<k>.json.
std::vector<SceneSpec> test_scenes(const SceneSpec& base_scene, std::uint64_t seed, const TestSetOptions& options,
                                   const SceneLayout& layout = {});

Manifest build_test_set(const SceneSpec& base_scene, const ViewingGeometry& geom, std::uint64_t seed,
                        const std::filesystem::path& out_dir, const DatasetConfig& config = {},
                        const TestSetOptions& options = {}, const SceneLayout& layout = {});

// Manifest files: manifest.csv plus manifest.cfg (config echo, key = value).
void write_manifest(const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& root);

}
