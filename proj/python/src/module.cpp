#include "stereoscale/errors.hpp"
#include "stereoscale/eval.hpp"
#include "stereoscale/network.hpp"
#include "stereoscale/pipeline.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

namespace py = pybind11;
using namespace stereoscale;

namespace
{
template <typename T>
py::array_t<T> to_array(const Grid<T>& grid)
{
        py::array_t<T> out({grid.height(), grid.width()});
        std::memcpy(out.mutable_data(), grid.values().data(), grid.size() * sizeof(T));
        return out;
}

template <typename T, typename Src>
Grid<T> from_array(const py::array_t<Src, py::array::c_style | py::array::forcecast>& a, const char* what)
{
        if (a.ndim() != 2)
        {
                throw InputError(std::string(what) + " must be a 2-D array");
        }
        Grid<T> grid(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
        const Src* src = a.data();
        for (std::size_t i = 0; i < grid.size(); ++i)
        {
                grid.values()[i] = static_cast<T>(src[i]);
        }
        return grid;
}

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

SceneVariant variant_of(const std::string& removal, bool flipped)
{
        return {parse_removal(removal), flipped};
}

struct Model
{
        ModelConfig config;
        ModelParams params;

        double predict_diopters(const FloatArray& disparity, const FloatArray& mask) const
        {
                const Network<float> net(config, params);
                return net.predict(prepare_input<float>(from_array<float>(disparity, "disparity"),
                                                        from_array<float>(mask, "mask"), config));
        }
};

py::dict metrics_dict(const Metrics& m)
{
        py::dict d;
        d["count"] = m.count;
        d["r2"] = m.r2;
        d["rmse_m"] = m.rmse_m;
        d["rmse_diopters"] = m.rmse_diopters;
        d["median_abs_error_m"] = m.median_abs_error_m;
        return d;
}

PipelineConfig config_from_dict(const std::map<std::string, std::string>& overrides)
{
        PipelineConfig cfg;
        for (const auto& [key, value] : overrides)
        {
                cfg.set(key, value);
        }
        return cfg;
}
}

PYBIND11_MODULE(_core, m)
{
        m.doc() = "Stereo disparity simulation and absolute-distance regression.";

        static py::exception<Error> base(m, "Error");
        py::register_exception_translator([](std::exception_ptr p) {
                try
                {
                        if (p)
                        {
                                std::rethrow_exception(p);
                        }
                }
                catch (const Error& e)
                {
                        base((e.kind() + ": " + e.what()).c_str());
                }
        });

        py::class_<ViewingGeometry>(m, "ViewingGeometry")
                .def(py::init<int, int, double, double>(), py::arg("width") = 256, py::arg("height") = 256,
                     py::arg("ipd_m") = ViewingGeometry::kDefaultIpd,
                     py::arg("fov_h_deg") = ViewingGeometry::kDefaultFovDeg)
                .def_property_readonly("width", &ViewingGeometry::width)
                .def_property_readonly("height", &ViewingGeometry::height)
                .def_property_readonly("ipd_m", &ViewingGeometry::ipd_m)
                .def_property_readonly("fov_h_deg", &ViewingGeometry::fov_h_deg)
                .def_property_readonly("fixation",
                                       [](const ViewingGeometry& g) {
                                               return std::make_pair(g.fixation().u, g.fixation().v);
                                       })
                .def("with_ipd", &ViewingGeometry::with_ipd);

        m.def(
                "pixel_ray",
                [](const ViewingGeometry& g, int u, int v) {
                        const Vec3 r = pixel_ray(g, u, v);
                        return std::make_tuple(r.x, r.y, r.z);
                },
                py::arg("geom"), py::arg("u"), py::arg("v"));
        m.def(
                "vergence_angle",
                [](const ViewingGeometry& g, double x, double y, double z) {
                        return vergence_angle(g, Vec3{x, y, z});
                },
                py::arg("geom"), py::arg("x"), py::arg("y"), py::arg("z"));
        m.def("small_angle_disparity", &small_angle_disparity, py::arg("ipd_m"), py::arg("d_m"), py::arg("f_m"));
        m.def(
                "disparity_from_depth",
                [](const ViewingGeometry& g, const DoubleArray& depth, const MaskArray& mask, double f) {
                        const DepthMap d{from_array<double>(depth, "depth"), from_array<std::uint8_t>(mask, "mask")};
                        const DisparityMap out = disparity_from_depth(g, d, f);
                        return std::make_pair(to_array(out.disparity), to_array(out.mask));
                },
                py::arg("geom"), py::arg("depth"), py::arg("mask"), py::arg("fixation_distance_m"),
                "Disparity (radians, positive nearer than fixation) and mask, both shaped (height, width).");

        py::class_<SceneSpec>(m, "Scene")
                .def_readonly("scene_id", &SceneSpec::scene_id)
                .def_readonly("seed", &SceneSpec::seed)
                .def_property_readonly("primitive_count", [](const SceneSpec& s) { return s.primitives.size(); })
                .def("to_json", &scene_to_json)
                .def_static("from_json", &scene_from_json)
                .def("save", [](const SceneSpec& s, const std::string& path) { save_scene(s, path); })
                .def_static("load", &load_scene)
                .def("__eq__", [](const SceneSpec& a, const SceneSpec& b) { return a == b; });

        m.def(
                "generate_scene",
                [](std::uint64_t seed, int near_count, int far_count, const std::string& scene_id) {
                        return generate_scene(seed, Inventory{near_count, far_count}, scene_id);
                },
                py::arg("seed"), py::arg("near_count") = Inventory{}.near_count,
                py::arg("far_count") = Inventory{}.far_count, py::arg("scene_id") = "train");
        m.def(
                "rearranged_scene", [](const SceneSpec& s, std::uint64_t seed) { return rearranged_scene(s, seed); },
                py::arg("scene"), py::arg("seed"));
        m.def(
                "render_depth",
                [](const SceneSpec& s, const ViewingGeometry& g, double scale_m, const std::string& removal,
                   bool flipped) {
                        const DepthMap d = render_depth(s, variant_of(removal, flipped), g, scale_m);
                        return std::make_pair(to_array(d.depth), to_array(d.mask));
                },
                py::arg("scene"), py::arg("geom"), py::arg("scale_m"), py::arg("removal") = "full",
                py::arg("flipped") = false);
        m.def(
                "make_sample",
                [](const SceneSpec& s, const ViewingGeometry& g, double distance_m, const std::string& removal,
                   bool flipped) {
                        const Sample sample = make_sample(s, variant_of(removal, flipped), g, distance_m);
                        return std::make_pair(to_array(sample.disparity), to_array(sample.mask));
                },
                py::arg("scene"), py::arg("geom"), py::arg("distance_m"), py::arg("removal") = "full",
                py::arg("flipped") = false, "Network input planes (float32 disparity, float32 mask).");
        m.def("sample_distances", &sample_distances, py::arg("seed"), py::arg("n"), py::arg("d_min") = 0.25,
              py::arg("d_max") = 2.5);
        m.def(
                "closed_form_scale",
                [](const DoubleArray& disparity, const MaskArray& mask, const SceneSpec& s, const ViewingGeometry& g,
                   const std::string& removal, bool flipped) {
                        const DisparityMap observed{from_array<double>(disparity, "disparity"),
                                                    from_array<std::uint8_t>(mask, "mask")};
                        const ScaleEstimate e = closed_form_scale(observed, s, variant_of(removal, flipped), g);
                        return std::make_pair(e.scale_m, e.usable_pixels);
                },
                py::arg("disparity"), py::arg("mask"), py::arg("scene"), py::arg("geom"),
                py::arg("removal") = "full", py::arg("flipped") = false);

        py::class_<Model>(m, "Model")
                .def_static(
                        "build",
                        [](int resolution, std::uint64_t seed) {
                                const ModelConfig cfg = default_model_config(resolution, resolution);
                                return Model{cfg, build_model(cfg, seed)};
                        },
                        py::arg("resolution") = 256, py::arg("seed") = 1)
                .def_static(
                        "load",
                        [](const std::filesystem::path& path) {
                                ModelParams p = load_params(path);
                                const ModelConfig cfg = config_from_metadata(p.metadata);
                                check_shapes(p, cfg);
                                return Model{cfg, std::move(p)};
                        },
                        py::arg("path"))
                .def("save", [](const Model& self, const std::filesystem::path& path) { save_params(self.params, path); })
                .def_property_readonly("width", [](const Model& self) { return self.config.width; })
                .def_property_readonly("parameter_count", [](const Model& self) { return self.params.parameter_count(); })
                .def_property_readonly("stage_receptive_fields",
                                       [](const Model& self) { return stage_receptive_fields(self.config.layers); })
                .def("predict_diopters", &Model::predict_diopters, py::arg("disparity"), py::arg("mask"))
                .def(
                        "predict_m",
                        [](const Model& self, const FloatArray& d, const FloatArray& mask) {
                                return diopters_to_meters(self.predict_diopters(d, mask));
                        },
                        py::arg("disparity"), py::arg("mask"));

        m.def("r_squared", [](const std::vector<double>& y, const std::vector<double>& p) { return r_squared(y, p); });
        m.def("rmse", [](const std::vector<double>& y, const std::vector<double>& p) { return rmse(y, p); });

        m.def("default_config", [] {
                const PipelineConfig cfg;
                std::map<std::string, std::string> out;
                for (const auto& key : PipelineConfig::keys())
                {
                        out[key] = cfg.get(key);
                }
                return out;
        });
        m.def(
                "run_pipeline",
                [](const std::filesystem::path& root, const std::map<std::string, std::string>& overrides) {
                        const PipelineResult r = [&] {
                                py::gil_scoped_release release;
                                return run_pipeline(config_from_dict(overrides), root);
                        }();
                        py::dict out = metrics_dict(r.report.metrics);
                        out["epochs"] = r.history.size();
                        out["model_path"] = (root / "model" / "model.qnw").string();
                        return out;
                },
                py::arg("root"), py::arg("overrides") = std::map<std::string, std::string>{},
                "Scene, datasets, training and evaluation under `root`; returns the test metrics.");
}
