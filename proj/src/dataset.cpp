#include "stereoscale/dataset.hpp"

#include "stereoscale/config.hpp"
#include "stereoscale/errors.hpp"
#include "stereoscale/io.hpp"
#include "stereoscale/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stereoscale
{
static_assert(std::endian::native == std::endian::little, "sample files are little-endian");

namespace
{
constexpr char kSampleMagic[4] = {'Q', 'N', 'D', '1'};

template <typename T>
void put(std::string& out, T value)
{
        char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        out.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& offset, const char* field)
{
        if (offset + sizeof(T) > in.size())
        {
                throw FormatError(std::string("truncated sample: missing ") + field);
        }
        T value;
        std::memcpy(&value, in.data() + offset, sizeof(T));
        offset += sizeof(T);
        return value;
}

std::string sample_id(const std::string& prefix, int index, SceneVariant variant)
{
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s_%04d_", prefix.c_str(), index);
        return buf + to_string(variant.removal) + (variant.flipped ? "_flip" : "");
}

std::vector<std::string> split_csv(const std::string& line)
{
        std::vector<std::string> fields;
        std::string field;
        std::istringstream in(line);
        while (std::getline(in, field, ','))
        {
                fields.push_back(field);
        }
        if (!line.empty() && line.back() == ',')
        {
                fields.emplace_back();
        }
        return fields;
}

void emit(Manifest& manifest, const Sample& sample, std::uint64_t seed)
{
        ManifestRow row;
        row.id = sample.sample_id;
        row.path = sample.sample_id + ".qnd";
        row.distance_m = sample.label_distance_m;
        row.variant = sample.variant;
        row.scene_id = sample.scene_id;
        row.seed = seed;
        row.distance_index = sample.distance_index;
        write_sample(sample, manifest.sample_path(row));
        manifest.rows.push_back(std::move(row));
}

void check_config(const ViewingGeometry& geom, const DatasetConfig& config)
{
        if (geom.width() != config.width || geom.height() != config.height || geom.ipd_m() != config.ipd_m ||
            geom.fov_h_deg() != config.fov_h_deg)
        {
                throw ConfigError("viewing geometry does not match dataset config");
        }
}
}

std::vector<double> sample_distances(std::uint64_t seed, int n, double d_min, double d_max)
{
        if (n < 1)
        {
                throw ConfigError("distance count must be >= 1");
        }
        if (!(d_min > 0) || !(d_min <= d_max) || !std::isfinite(d_max))
        {
                throw ConfigError("invalid distance range [" + format_number(d_min) + ", " + format_number(d_max) + "]");
        }
        Rng rng(seed);
        const double lo = 1.0 / d_max;
        const double hi = 1.0 / d_min;
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
        {
                out.push_back(std::clamp(1.0 / rng.uniform(lo, hi), d_min, d_max));
        }
        return out;
}

Sample make_sample(const SceneSpec& scene, SceneVariant variant, const ViewingGeometry& geom, double distance_m)
{
        return make_sample(render_canonical(scene, variant.removal, geom), scene, variant, geom, distance_m);
}

Sample make_sample(const CanonicalRender& canonical, const SceneSpec& scene, SceneVariant variant,
                   const ViewingGeometry& geom, double distance_m)
{
        const DepthMap depth = scale_render(canonical, variant.flipped, distance_m);
        const DisparityMap disparity = disparity_from_depth(variant_geometry(geom, variant), depth, distance_m);
        Sample s;
        s.disparity = Grid<float>(geom.width(), geom.height());
        s.mask = Grid<float>(geom.width(), geom.height());
        const auto src_d = disparity.disparity.values();
        const auto src_m = disparity.mask.values();
        auto dst_d = s.disparity.values();
        auto dst_m = s.mask.values();
        for (std::size_t i = 0; i < src_d.size(); ++i)
        {
                dst_d[i] = static_cast<float>(src_d[i]);
                dst_m[i] = src_m[i] ? 1.0f : 0.0f;
        }
        s.label_distance_m = distance_m;
        s.variant = variant;
        s.scene_id = scene.scene_id;
        return s;
}

void write_sample(const Sample& sample, const std::filesystem::path& path)
{
        const int w = sample.disparity.width();
        const int h = sample.disparity.height();
        if (sample.mask.width() != w || sample.mask.height() != h)
        {
                throw DataError("mask and disparity dimensions differ for " + sample.sample_id);
        }
        std::string bytes;
        bytes.reserve(20 + sample.disparity.size() * 8 + 8);
        bytes.append(kSampleMagic, 4);
        put<std::uint32_t>(bytes, static_cast<std::uint32_t>(w));
        put<std::uint32_t>(bytes, static_cast<std::uint32_t>(h));
        put<std::uint32_t>(bytes, 2); // channels
        put<std::uint32_t>(bytes, 0); // dtype: float32
        for (const float x : sample.disparity.values())
        {
                put(bytes, x);
        }
        for (const float x : sample.mask.values())
        {
                put(bytes, x);
        }
        put<double>(bytes, sample.label_distance_m);
        write_file_atomic(path, bytes);
}

Sample load_sample(const std::filesystem::path& path)
{
        const std::string bytes = read_file(path);
        if (bytes.size() < 4 || std::memcmp(bytes.data(), kSampleMagic, 4) != 0)
        {
                throw FormatError(path.string() + ": bad magic");
        }
        std::size_t offset = 4;
        const auto width = take<std::uint32_t>(bytes, offset, "width");
        const auto height = take<std::uint32_t>(bytes, offset, "height");
        const auto channels = take<std::uint32_t>(bytes, offset, "channels");
        const auto dtype = take<std::uint32_t>(bytes, offset, "dtype");
        if (width < 1 || height < 1 || width > 65536 || height > 65536)
        {
                throw FormatError(path.string() + ": bad dimensions " + std::to_string(width) + "x" +
                                  std::to_string(height));
        }
        if (channels != 2)
        {
                throw FormatError(path.string() + ": channels must be 2, got " + std::to_string(channels));
        }
        if (dtype != 0)
        {
                throw FormatError(path.string() + ": unsupported dtype " + std::to_string(dtype));
        }
        const std::size_t n = static_cast<std::size_t>(width) * height;
        const std::size_t expected = offset + 2 * n * sizeof(float) + sizeof(double);
        if (bytes.size() < expected)
        {
                throw FormatError(path.string() + ": truncated payload (" + std::to_string(bytes.size()) + " of " +
                                  std::to_string(expected) + " bytes)");
        }
        if (bytes.size() > expected)
        {
                throw FormatError(path.string() + ": trailing bytes after label");
        }
        Sample s;
        s.sample_id = path.stem().string();
        s.disparity = Grid<float>(static_cast<int>(width), static_cast<int>(height));
        s.mask = Grid<float>(static_cast<int>(width), static_cast<int>(height));
        std::memcpy(s.disparity.values().data(), bytes.data() + offset, n * sizeof(float));
        offset += n * sizeof(float);
        std::memcpy(s.mask.values().data(), bytes.data() + offset, n * sizeof(float));
        offset += n * sizeof(float);
        s.label_distance_m = take<double>(bytes, offset, "label_distance_m");
        return s;
}

Sample load_sample(const Manifest& manifest, const ManifestRow& row)
{
        Sample s = load_sample(manifest.sample_path(row));
        if (s.disparity.width() != manifest.config.width || s.disparity.height() != manifest.config.height)
        {
                throw FormatError(row.path + ": dimensions " + std::to_string(s.disparity.width()) + "x" +
                                  std::to_string(s.disparity.height()) + " differ from manifest " +
                                  std::to_string(manifest.config.width) + "x" +
                                  std::to_string(manifest.config.height));
        }
        if (s.label_distance_m != row.distance_m)
        {
                throw FormatError(row.path + ": label_distance_m " + format_number(s.label_distance_m) +
                                  " differs from manifest " + format_number(row.distance_m));
        }
        s.sample_id = row.id;
        s.variant = row.variant;
        s.scene_id = row.scene_id;
        s.distance_index = row.distance_index;
        return s;
}

Manifest build_training_set(const SceneSpec& scene, const ViewingGeometry& geom, std::uint64_t seed,
                            const std::filesystem::path& out_dir, const DatasetConfig& config,
                            const TrainSetOptions& options)
{
        check_config(geom, config);
        std::filesystem::create_directories(out_dir);
        Manifest manifest;
        manifest.root = out_dir;
        manifest.kind = "train";
        manifest.seed = seed;
        manifest.config = config;
        const auto distances =
                sample_distances(derive_seed(seed, "train-distances"), options.n_distances, config.d_min, config.d_max);
        std::vector<CanonicalRender> renders;
        for (const Removal removal : {Removal::Full, Removal::MinusNear, Removal::MinusFar})
        {
                renders.push_back(render_canonical(scene, removal, geom));
        }
        for (int i = 0; i < static_cast<int>(distances.size()); ++i)
        {
                for (const SceneVariant variant : SceneVariant::all())
                {
                        Sample s;
                        try
                        {
                                s = make_sample(renders[static_cast<std::size_t>(variant.removal)], scene, variant, geom,
                                                distances[static_cast<std::size_t>(i)]);
                        }
                        catch (const Error& e)
                        {
                                throw GenerationError("render failed at distance " +
                                                      format_number(distances[static_cast<std::size_t>(i)]) +
                                                      " variant " + to_string(variant.removal) +
                                                      (variant.flipped ? "/flipped" : "") + ": " + e.what());
                        }
                        s.sample_id = sample_id("train", i, variant);
                        s.distance_index = i;
                        emit(manifest, s, seed);
                }
        }
        write_manifest(manifest);
        return manifest;
}

std::vector<SceneSpec> test_scenes(const SceneSpec& base_scene, std::uint64_t seed, const TestSetOptions& options,
                                   const SceneLayout& layout)
{
        std::vector<SceneSpec> scenes;
        for (int k = 0; k < options.n_scenes; ++k)
        {
                const std::uint64_t scene_seed = derive_seed(seed, "test-scene-" + std::to_string(k));
                scenes.push_back(rearranged_scene(base_scene, scene_seed, layout));
        }
        return scenes;
}

Manifest build_test_set(const SceneSpec& base_scene, const ViewingGeometry& geom, std::uint64_t seed,
                        const std::filesystem::path& out_dir, const DatasetConfig& config,
                        const TestSetOptions& options, const SceneLayout& layout)
{
        check_config(geom, config);
        if (options.n_samples < 1 || options.n_scenes < 1)
        {
                throw ConfigError("test set needs at least one sample and one scene");
        }
        std::filesystem::create_directories(out_dir);
        const std::vector<SceneSpec> scenes = test_scenes(base_scene, seed, options, layout);
        for (std::size_t k = 0; k < scenes.size(); ++k)
        {
                save_scene(scenes[k], (out_dir / ("scene_" + std::to_string(k) + ".json")).string());
        }
        Manifest manifest;
        manifest.root = out_dir;
        manifest.kind = "test";
        manifest.seed = seed;
        manifest.config = config;
        const auto distances =
                sample_distances(derive_seed(seed, "test-distances"), options.n_samples, config.d_min, config.d_max);
        const SceneVariant full{Removal::Full, false};
        std::vector<CanonicalRender> renders;
        for (const SceneSpec& scene : scenes)
        {
                renders.push_back(render_canonical(scene, Removal::Full, geom));
        }
        for (int i = 0; i < options.n_samples; ++i)
        {
                const double d = distances[static_cast<std::size_t>(i)];
                const std::size_t k = static_cast<std::size_t>(i % options.n_scenes);
                Sample s;
                try
                {
                        s = make_sample(renders[k], scenes[k], full, geom, d);
                }
                catch (const Error& e)
                {
                        throw GenerationError("render failed at distance " + format_number(d) + " variant full: " +
                                              e.what());
                }
                s.sample_id = sample_id("test", i, full);
                s.distance_index = i;
                emit(manifest, s, seed);
        }
        write_manifest(manifest);
        return manifest;
}

void write_manifest(const Manifest& manifest)
{
        std::string csv = std::string(kManifestHeader) + "\n";
        for (const ManifestRow& row : manifest.rows)
        {
                csv += row.id + "," + row.path + "," + format_number(row.distance_m) + "," +
                       to_string(row.variant.removal) + "," + (row.variant.flipped ? "1" : "0") + "," + row.scene_id +
                       "," + std::to_string(row.seed) + "\n";
        }
        write_file_atomic(manifest.root / "manifest.csv", csv);

        KeyValues cfg;
        cfg.set("kind", manifest.kind);
        cfg.set("seed", std::to_string(manifest.seed));
        cfg.set("ipd_m", format_number(manifest.config.ipd_m));
        cfg.set("fov_h_deg", format_number(manifest.config.fov_h_deg));
        cfg.set("width", std::to_string(manifest.config.width));
        cfg.set("height", std::to_string(manifest.config.height));
        cfg.set("d_min", format_number(manifest.config.d_min));
        cfg.set("d_max", format_number(manifest.config.d_max));
        cfg.set("count", std::to_string(manifest.rows.size()));
        write_file_atomic(manifest.root / "manifest.cfg", cfg.to_string());
}

Manifest load_manifest(const std::filesystem::path& root)
{
        Manifest manifest;
        manifest.root = root;
        const KeyValues cfg = KeyValues::parse(read_file(root / "manifest.cfg"), (root / "manifest.cfg").string());
        manifest.kind = cfg.get("kind");
        manifest.seed = cfg.get_u64("seed");
        manifest.config.ipd_m = cfg.get_double("ipd_m");
        manifest.config.fov_h_deg = cfg.get_double("fov_h_deg");
        manifest.config.width = cfg.get_int("width");
        manifest.config.height = cfg.get_int("height");
        manifest.config.d_min = cfg.get_double("d_min");
        manifest.config.d_max = cfg.get_double("d_max");

        std::istringstream csv(read_file(root / "manifest.csv"));
        std::string line;
        if (!std::getline(csv, line) || line != kManifestHeader)
        {
                throw FormatError((root / "manifest.csv").string() + ": bad header");
        }
        int line_no = 1;
        while (std::getline(csv, line))
        {
                ++line_no;
                if (line.empty())
                {
                        continue;
                }
                const auto f = split_csv(line);
                if (f.size() != 7)
                {
                        throw FormatError("manifest.csv line " + std::to_string(line_no) + ": expected 7 fields");
                }
                ManifestRow row;
                row.id = f[0];
                row.path = f[1];
                try
                {
                        row.distance_m = std::stod(f[2]);
                        row.seed = std::stoull(f[6]);
                        // ids look like <prefix>_<index>_...
                        const auto a = row.id.find('_');
                        row.distance_index = a == std::string::npos ? 0 : std::stoi(row.id.substr(a + 1));
                }
                catch (const std::exception&)
                {
                        throw FormatError("manifest.csv line " + std::to_string(line_no) + ": bad number");
                }
                row.variant.removal = parse_removal(f[3]);
                if (f[4] != "0" && f[4] != "1")
                {
                        throw FormatError("manifest.csv line " + std::to_string(line_no) + ": flip must be 0 or 1");
                }
                row.variant.flipped = f[4] == "1";
                row.scene_id = f[5];
                if (!std::filesystem::exists(manifest.sample_path(row)))
                {
                        throw IoError("manifest.csv line " + std::to_string(line_no) + ": missing " +
                                      manifest.sample_path(row).string());
                }
                manifest.rows.push_back(std::move(row));
        }
        if (cfg.get_int("count") != static_cast<int>(manifest.rows.size()))
        {
                throw FormatError("manifest row count differs from manifest.cfg count");
        }
        return manifest;
}
}
