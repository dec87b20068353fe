#pragma once

#include "stereoscale/config.hpp"
#include "stereoscale/dataset.hpp"
#include "stereoscale/geometry.hpp"
#include "stereoscale/model.hpp"
#include "stereoscale/scene.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stereoscale
{
// Predictions at or below this many diopters are read as this (1 km).
inline constexpr double kMinPredictedDiopters = 1e-3;
inline constexpr double kDisparityFloor = 1e-5;
inline constexpr std::size_t kMinUsablePixels = 100;

double diopters_to_meters(double diopters);

// R^2 = 1 - SS_res / SS_tot; throws DataError on empty or constant truth.
double r_squared(std::span<const double> truth, std::span<const double> pred);
double rmse(std::span<const double> truth, std::span<const double> pred);
double median(std::vector<double> values);

struct Metrics
{
        std::size_t count = 0;
        double r2 = 0;
        double rmse_m = 0;
        double rmse_diopters = 0;
        double median_abs_error_m = 0;
};

Metrics compute_metrics(std::span<const double> truth_m, std::span<const double> pred_m);

struct PredictionRow
{
        std::string id;
        double true_m = 0;
        double pred_m = 0;
        double err_m = 0; // pred - true
};

struct EvalReport
{
        std::vector<PredictionRow> rows;
        Metrics metrics;
        KeyValues config; // echoed into the report footer and stdout
};

// Pure; rows ordered as in the manifest. `threads` > 1 splits samples across workers.
EvalReport evaluate(const ModelParams& params, const ModelConfig& model, const Manifest& test, int threads = 1);

EvalReport make_report(std::vector<PredictionRow> rows);

// CSV `id,true_m,pred_m,err_m` plus one `# key=value ...` footer line; optional SVG scatter.
void emit_report(const EvalReport& report, const std::filesystem::path& csv_path,
                 const std::optional<std::filesystem::path>& svg_path = std::nullopt, double axis_min = 0.25,
                 double axis_max = 2.5);
std::vector<PredictionRow> read_report_csv(const std::filesystem::path& csv_path);
std::string render_svg(const EvalReport& report, double axis_min, double axis_max);

// `key=value` lines for stdout.
std::string format_metrics(const Metrics& metrics, const std::string& prefix = "");

struct ScaleEstimate
{
        double scale_m = 0;
        std::size_t usable_pixels = 0;
};

// Matched-scene analytic inverse: per usable pixel,
// s = ipd * (rho_P/|P|^2 - rho_F/|F|^2) / disparity, with P, F the canonical surface points;
// the median over pixels with |disparity| > floor. SignalError below 100 usable pixels.
ScaleEstimate closed_form_scale(const DisparityMap& observed, const SceneSpec& canonical, SceneVariant variant,
                                const ViewingGeometry& geom, double floor = kDisparityFloor);

struct HelmholtzReport
{
        double factor = 1;
        std::vector<double> distances_m;
        std::vector<double> ratios; // predicted / true distance
        double median_ratio = 0;
};

// Renders the scene (full, unflipped) at each distance with ipd * factor and feeds a model
// trained at the nominal ipd.
HelmholtzReport helmholtz_probe(const ModelParams& params, const ModelConfig& model, const SceneSpec& scene,
                                const ViewingGeometry& geom, std::span<const double> distances_m, double factor);

// Masked mean |disparity| (radians).
double mean_abs_disparity(const Sample& sample);

// Baseline: diopters (or meters) affine in masked mean |disparity|, fitted by least squares.
struct LinearProbe
{
        bool in_diopters = true;
        double slope = 0;
        double intercept = 0;

        double predict_m(double feature) const;
};

LinearProbe fit_linear_probe(std::span<const double> features, std::span<const double> distances_m,
                             bool in_diopters);

struct BaselineReport
{
        double mean_predictor_r2 = 0;
        double probe_diopters_r2 = 0;
        double probe_meters_r2 = 0;

        // The stronger of the two probe parameterizations.
        double best_probe_r2() const;
};

BaselineReport evaluate_baselines(const Manifest& train, const Manifest& test);
}
