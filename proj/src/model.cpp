#include "stereoscale/model.hpp"

#include "stereoscale/errors.hpp"
#include "stereoscale/io.hpp"
#include "stereoscale/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace stereoscale
{
static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

namespace
{
constexpr char kCheckpointMagic[4] = {'Q', 'N', 'W', '1'};

std::string join_numbers(const auto& values)
{
        std::string out;
        for (const auto& v : values)
        {
                if (!out.empty())
                {
                        out += ",";
                }
                out += format_number(static_cast<double>(v));
        }
        return out;
}

std::vector<double> split_numbers(const std::string& text, const std::string& key)
{
        std::vector<double> out;
        std::istringstream in(text);
        std::string item;
        while (std::getline(in, item, ','))
        {
                try
                {
                        std::size_t used = 0;
                        out.push_back(std::stod(item, &used));
                        if (used != item.size())
                        {
                                throw std::invalid_argument(item);
                        }
                }
                catch (const std::logic_error&)
                {
                        throw ConfigError(key + ": not a number list: " + text);
                }
        }
        return out;
}

std::string shape_string(const std::vector<std::uint32_t>& shape)
{
        std::string out = "[";
        for (std::size_t i = 0; i < shape.size(); ++i)
        {
                out += (i ? "," : "") + std::to_string(shape[i]);
        }
        return out + "]";
}

template <typename T>
void put(std::string& out, T value)
{
        char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        out.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& offset, const std::string& what)
{
        if (offset + sizeof(T) > in.size())
        {
                throw FormatError("truncated checkpoint: missing " + what);
        }
        T value;
        std::memcpy(&value, in.data() + offset, sizeof(T));
        offset += sizeof(T);
        return value;
}

// Width range over which every stage RF of `layers` stays within tolerance.
std::pair<double, double> supported_widths(const std::vector<LayerSpec>& layers)
{
        const auto rf = stage_receptive_fields(layers);
        double lo = 0.0;
        double hi = 1e300;
        for (int s = 0; s < 3; ++s)
        {
                const double per_width = kStageRfTargetsPx1024[s] / 1024.0;
                lo = std::max(lo, rf[s] / ((1.0 + kRfTolerance) * per_width));
                hi = std::min(hi, rf[s] / ((1.0 - kRfTolerance) * per_width));
        }
        return {lo, hi};
}
}

std::array<double, 3> ModelConfig::rf_targets_px() const
{
        std::array<double, 3> out{};
        for (int s = 0; s < 3; ++s)
        {
                out[s] = rf_targets_ref_px[s] * width / rf_reference_width;
        }
        return out;
}

std::array<double, 3> ModelConfig::rf_targets_deg() const
{
        std::array<double, 3> out = rf_targets_px();
        for (double& v : out)
        {
                v *= degrees_per_pixel();
        }
        return out;
}

std::vector<ReceptiveField> receptive_fields(const std::vector<LayerSpec>& layers)
{
        std::vector<ReceptiveField> out;
        ReceptiveField rf;
        for (const LayerSpec& layer : layers)
        {
                rf.size += (layer.kernel - 1) * rf.jump;
                rf.jump *= layer.stride;
                out.push_back(rf);
        }
        return out;
}

std::array<int, 3> stage_receptive_fields(const std::vector<LayerSpec>& layers)
{
        std::array<int, 3> out = {0, 0, 0};
        const auto rfs = receptive_fields(layers);
        for (std::size_t i = 0; i < layers.size(); ++i)
        {
                out[layers[i].stage] = rfs[i].size;
        }
        return out;
}

void validate(const ModelConfig& cfg)
{
        if (cfg.width < 1 || cfg.height < 1)
        {
                throw ConfigError("model resolution must be positive");
        }
        if (!(cfg.fov_h_deg > 0.0 && cfg.fov_h_deg < 180.0))
        {
                throw ConfigError("fov_h_deg must lie in (0, 180)");
        }
        if (!(cfg.disparity_scale > 0.0) || !std::isfinite(cfg.disparity_scale))
        {
                throw ConfigError("disparity_scale must be positive");
        }
        if (cfg.layers.empty())
        {
                throw ConfigError("model has no layers");
        }
        for (int c : cfg.stage_channels)
        {
                if (c < 1)
                {
                        throw ConfigError("stage channel counts must be >= 1");
                }
        }
        int prev_stage = 0;
        std::array<bool, 3> stage_has_conv = {false, false, false};
        int h = cfg.height;
        int w = cfg.width;
        for (std::size_t i = 0; i < cfg.layers.size(); ++i)
        {
                const LayerSpec& l = cfg.layers[i];
                const std::string where = "layer " + std::to_string(i) + ": ";
                if (l.stage < prev_stage || l.stage > 2)
                {
                        throw ConfigError(where + "stages must be 0, 1, 2 in order");
                }
                prev_stage = l.stage;
                if (l.kernel < 1 || l.stride < 1)
                {
                        throw ConfigError(where + "kernel and stride must be >= 1");
                }
                if (l.kind == LayerKind::Conv)
                {
                        if (l.kernel % 2 == 0)
                        {
                                throw ConfigError(where + "convolution kernels must be odd");
                        }
                        stage_has_conv[l.stage] = true;
                        h = (h - 1) / l.stride + 1;
                        w = (w - 1) / l.stride + 1;
                }
                else
                {
                        if (i == 0)
                        {
                                throw ConfigError(where + "the first layer must be a convolution");
                        }
                        if (l.kernel != l.stride)
                        {
                                throw ConfigError(where + "pooling kernel must equal its stride");
                        }
                        h /= l.stride;
                        w /= l.stride;
                }
                if (h < 1 || w < 1)
                {
                        throw ConfigError(where + "feature map vanishes at " + std::to_string(cfg.width) + "x" +
                                          std::to_string(cfg.height));
                }
        }
        if (cfg.layers.back().kind != LayerKind::Conv)
        {
                throw ConfigError("the last layer must be a convolution");
        }
        for (int s = 0; s < 3; ++s)
        {
                if (!stage_has_conv[s])
                {
                        throw ConfigError("stage " + std::to_string(s + 1) + " has no convolution");
                }
        }

        const auto realized = stage_receptive_fields(cfg.layers);
        const auto target = cfg.rf_targets_px();
        for (int s = 0; s < 3; ++s)
        {
                const double rel = realized[s] / target[s] - 1.0;
                if (std::abs(rel) > kRfTolerance)
                {
                        const double lo = target[s] * (1.0 - kRfTolerance);
                        const double hi = target[s] * (1.0 + kRfTolerance);
                        throw ConfigError("stage " + std::to_string(s + 1) + " receptive field " +
                                          std::to_string(realized[s]) + " px misses target " +
                                          format_number(target[s]) + " px at width " + std::to_string(cfg.width) +
                                          " (achievable range [" + format_number(lo) + ", " + format_number(hi) +
                                          "] px)");
                }
        }
}

std::vector<LayerSpec> reference_layers_1024()
{
        return {
                {LayerKind::Conv, 5, 1, 0}, {LayerKind::Conv, 5, 1, 0}, {LayerKind::Conv, 3, 4, 0},
                {LayerKind::Conv, 5, 1, 1}, {LayerKind::Conv, 5, 1, 1}, {LayerKind::Conv, 3, 2, 1},
                {LayerKind::Conv, 5, 1, 2}, {LayerKind::Conv, 5, 1, 2}, {LayerKind::Conv, 5, 1, 2},
                {LayerKind::Conv, 5, 1, 2},
        };
}

std::vector<LayerSpec> desk_layers_256()
{
        return {
                {LayerKind::Conv, 3, 2, 0},
                {LayerKind::AvgPool, 2, 2, 1},
                {LayerKind::Conv, 3, 1, 1},
                {LayerKind::Conv, 5, 2, 2},
                {LayerKind::Conv, 3, 1, 2},
        };
}

std::vector<LayerSpec> plan_layers(int width)
{
        const std::vector<std::vector<LayerSpec>> chains = {desk_layers_256(), reference_layers_1024()};
        std::string ranges;
        for (const auto& chain : chains)
        {
                const auto [lo, hi] = supported_widths(chain);
                if (width >= lo && width <= hi)
                {
                        return chain;
                }
                ranges += (ranges.empty() ? "" : ", ") + std::to_string(static_cast<int>(std::ceil(lo))) + "-" +
                          std::to_string(static_cast<int>(std::floor(hi)));
        }
        throw ConfigError("no layer chain meets the receptive-field targets at width " + std::to_string(width) +
                          " (supported widths: " + ranges + ")");
}

ModelConfig default_model_config(int width, int height, double fov_h_deg)
{
        ModelConfig cfg;
        cfg.width = width;
        cfg.height = height;
        cfg.fov_h_deg = fov_h_deg;
        cfg.layers = plan_layers(width);
        validate(cfg);
        return cfg;
}

std::string describe_layers(const std::vector<LayerSpec>& layers)
{
        std::string out;
        for (const LayerSpec& l : layers)
        {
                if (!out.empty())
                {
                        out += " ";
                }
                out += std::to_string(l.stage + 1) + ":";
                out += (l.kind == LayerKind::Conv ? "conv" : "pool") + std::to_string(l.kernel);
                if (l.kind == LayerKind::Conv && l.stride != 1)
                {
                        out += "/" + std::to_string(l.stride);
                }
        }
        return out;
}

std::vector<LayerSpec> parse_layers(const std::string& text)
{
        std::vector<LayerSpec> out;
        std::istringstream in(text);
        std::string token;
        while (in >> token)
        {
                LayerSpec l;
                int stage = 0;
                char kind[5] = {};
                int kernel = 0;
                int stride = 1;
                int used = 0;
                const int n = std::sscanf(token.c_str(), "%d:%4[a-z]%d%n/%d%n", &stage, kind, &kernel, &used,
                                          &stride, &used);
                const bool ok = n >= 3 && used == static_cast<int>(token.size()) && stage >= 1 && stage <= 3;
                if (!ok || (std::strcmp(kind, "conv") != 0 && std::strcmp(kind, "pool") != 0))
                {
                        throw ConfigError("bad layer token '" + token + "' (expected e.g. 1:conv3/2 or 2:pool2)");
                }
                l.stage = stage - 1;
                l.kernel = kernel;
                if (std::strcmp(kind, "pool") == 0)
                {
                        if (n > 3)
                        {
                                throw ConfigError("bad layer token '" + token + "': pooling takes no stride");
                        }
                        l.kind = LayerKind::AvgPool;
                        l.stride = kernel;
                }
                else
                {
                        l.stride = stride;
                }
                out.push_back(l);
        }
        return out;
}

double forward_macs(const ModelConfig& cfg)
{
        double macs = 0.0;
        int h = cfg.height;
        int w = cfg.width;
        int channels = 2;
        for (const LayerSpec& l : cfg.layers)
        {
                if (l.kind == LayerKind::Conv)
                {
                        h = (h - 1) / l.stride + 1;
                        w = (w - 1) / l.stride + 1;
                        const int out = cfg.stage_channels[l.stage];
                        macs += static_cast<double>(h) * w * out * channels * l.kernel * l.kernel;
                        channels = out;
                }
                else
                {
                        h /= l.stride;
                        w /= l.stride;
                }
        }
        return macs;
}

std::size_t NamedTensor::numel() const
{
        std::size_t n = 1;
        for (auto d : shape)
        {
                n *= d;
        }
        return n;
}

const NamedTensor& ModelParams::at(const std::string& name) const
{
        for (const auto& t : tensors)
        {
                if (t.name == name)
                {
                        return t;
                }
        }
        throw FormatError("checkpoint has no tensor '" + name + "'");
}

NamedTensor& ModelParams::at(const std::string& name)
{
        return const_cast<NamedTensor&>(std::as_const(*this).at(name));
}

std::size_t ModelParams::parameter_count() const
{
        std::size_t n = 0;
        for (const auto& t : tensors)
        {
                n += t.numel();
        }
        return n;
}

std::vector<NamedTensor> parameter_layout(const ModelConfig& cfg)
{
        std::vector<NamedTensor> out;
        std::uint32_t channels = 2;
        int conv = 0;
        for (const LayerSpec& l : cfg.layers)
        {
                if (l.kind != LayerKind::Conv)
                {
                        continue;
                }
                const auto oc = static_cast<std::uint32_t>(cfg.stage_channels[l.stage]);
                const auto k = static_cast<std::uint32_t>(l.kernel);
                const std::string prefix = "conv" + std::to_string(conv++);
                out.push_back({prefix + ".weight", {oc, channels, k, k}, {}});
                out.push_back({prefix + ".bias", {oc}, {}});
                channels = oc;
        }
        out.push_back({"head.weight", {1, channels}, {}});
        out.push_back({"head.bias", {1}, {}});
        for (auto& t : out)
        {
                t.values.assign(t.numel(), 0.0f);
        }
        return out;
}

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed)
{
        validate(cfg);
        ModelParams params;
        params.tensors = parameter_layout(cfg);
        Rng rng(derive_seed(seed, "init"));
        // Weights and biases of a layer share the bound 1/sqrt(fan_in).
        for (std::size_t i = 0; i + 1 < params.tensors.size(); i += 2)
        {
                NamedTensor& weight = params.tensors[i];
                NamedTensor& bias = params.tensors[i + 1];
                const double fan_in = static_cast<double>(weight.numel() / weight.shape[0]);
                const double bound = 1.0 / std::sqrt(fan_in);
                for (float& v : weight.values)
                {
                        v = static_cast<float>(rng.uniform(-bound, bound));
                }
                for (float& v : bias.values)
                {
                        v = static_cast<float>(rng.uniform(-bound, bound));
                }
        }
        params.metadata.set("seed", std::to_string(seed));
        params.metadata.set("epochs", "0");
        write_config_metadata(cfg, params.metadata);
        return params;
}

void write_config_metadata(const ModelConfig& cfg, KeyValues& metadata)
{
        metadata.set("model.width", std::to_string(cfg.width));
        metadata.set("model.height", std::to_string(cfg.height));
        metadata.set("model.fov_h_deg", format_number(cfg.fov_h_deg));
        metadata.set("model.layers", describe_layers(cfg.layers));
        metadata.set("model.channels", join_numbers(cfg.stage_channels));
        metadata.set("model.disparity_scale", format_number(cfg.disparity_scale));
        metadata.set("model.rf_targets_ref_px", join_numbers(cfg.rf_targets_ref_px));
        metadata.set("model.rf_reference_width", std::to_string(cfg.rf_reference_width));
        metadata.set("model.stage_rf_px", join_numbers(stage_receptive_fields(cfg.layers)));
        metadata.set("model.head", "masked_mean_affine_diopters");
}

ModelConfig config_from_metadata(const KeyValues& metadata)
{
        ModelConfig cfg;
        cfg.width = metadata.get_int("model.width");
        cfg.height = metadata.get_int("model.height");
        cfg.fov_h_deg = metadata.get_double("model.fov_h_deg");
        cfg.layers = parse_layers(metadata.get("model.layers"));
        const auto channels = split_numbers(metadata.get("model.channels"), "model.channels");
        const auto targets = split_numbers(metadata.get("model.rf_targets_ref_px"), "model.rf_targets_ref_px");
        if (channels.size() != 3 || targets.size() != 3)
        {
                throw FormatError("model.channels and model.rf_targets_ref_px need three entries");
        }
        for (int s = 0; s < 3; ++s)
        {
                cfg.stage_channels[s] = static_cast<int>(channels[s]);
                cfg.rf_targets_ref_px[s] = targets[s];
        }
        cfg.disparity_scale = metadata.get_double("model.disparity_scale");
        cfg.rf_reference_width = metadata.get_int("model.rf_reference_width");
        return cfg;
}

std::string serialize_params(const ModelParams& params)
{
        std::string out(kCheckpointMagic, 4);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors.size()));
        for (const auto& t : params.tensors)
        {
                if (t.name.size() > 0xffff || t.shape.size() > 0xff)
                {
                        throw FormatError("tensor '" + t.name + "' cannot be encoded");
                }
                if (t.values.size() != t.numel())
                {
                        throw FormatError("tensor '" + t.name + "' holds " + std::to_string(t.values.size()) +
                                          " values for shape " + shape_string(t.shape));
                }
                put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
                out += t.name;
                put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
                for (auto d : t.shape)
                {
                        put<std::uint32_t>(out, d);
                }
                const auto* bytes = reinterpret_cast<const char*>(t.values.data());
                out.append(bytes, t.values.size() * sizeof(float));
        }
        out += params.metadata.to_string("=");
        return out;
}

void save_params(const ModelParams& params, const std::filesystem::path& path)
{
        for (const auto& t : params.tensors)
        {
                for (float v : t.values)
                {
                        if (!std::isfinite(v))
                        {
                                throw NumericalError("tensor '" + t.name + "' has non-finite values");
                        }
                }
        }
        write_file_atomic(path, serialize_params(params));
}

ModelParams load_params(const std::filesystem::path& path)
{
        const std::string bytes = read_file(path);
        const std::string where = path.string() + ": ";
        if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        {
                throw FormatError(where + "bad checkpoint magic");
        }
        std::size_t offset = 4;
        ModelParams params;
        try
        {
                const auto count = take<std::uint32_t>(bytes, offset, "tensor count");
                for (std::uint32_t i = 0; i < count; ++i)
                {
                        NamedTensor t;
                        const auto name_len = take<std::uint16_t>(bytes, offset, "name length");
                        if (offset + name_len > bytes.size())
                        {
                                throw FormatError("truncated checkpoint: missing tensor name");
                        }
                        t.name = bytes.substr(offset, name_len);
                        offset += name_len;
                        const auto rank = take<std::uint8_t>(bytes, offset, "rank of " + t.name);
                        for (int r = 0; r < rank; ++r)
                        {
                                t.shape.push_back(take<std::uint32_t>(bytes, offset, "dims of " + t.name));
                        }
                        const std::size_t n = t.numel();
                        if (n > (bytes.size() - offset) / sizeof(float))
                        {
                                throw FormatError("truncated checkpoint: missing data of " + t.name);
                        }
                        t.values.resize(n);
                        std::memcpy(t.values.data(), bytes.data() + offset, n * sizeof(float));
                        offset += n * sizeof(float);
                        for (float v : t.values)
                        {
                                if (!std::isfinite(v))
                                {
                                        throw FormatError("tensor '" + t.name + "' has non-finite values");
                                }
                        }
                        params.tensors.push_back(std::move(t));
                }
                params.metadata = KeyValues::parse(bytes.substr(offset), path.string());
        }
        catch (const Error& e)
        {
                throw FormatError(where + e.what());
        }
        return params;
}

void check_shapes(const ModelParams& params, const ModelConfig& cfg)
{
        const auto expected = parameter_layout(cfg);
        if (expected.size() != params.tensors.size())
        {
                throw FormatError("checkpoint has " + std::to_string(params.tensors.size()) +
                                  " tensors, config expects " + std::to_string(expected.size()));
        }
        for (std::size_t i = 0; i < expected.size(); ++i)
        {
                const auto& got = params.tensors[i];
                const auto& want = expected[i];
                if (got.name != want.name || got.shape != want.shape)
                {
                        throw FormatError("tensor " + std::to_string(i) + ": checkpoint has " + got.name + " " +
                                          shape_string(got.shape) + ", config expects " + want.name + " " +
                                          shape_string(want.shape));
                }
        }
}

ModelParams load_params(const std::filesystem::path& path, const ModelConfig& expected)
{
        ModelParams params = load_params(path);
        check_shapes(params, expected);
        return params;
}
}
