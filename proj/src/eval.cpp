#include "stereoscale/eval.hpp"

#include "stereoscale/errors.hpp"
#include "stereoscale/io.hpp"
#include "stereoscale/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace stereoscale
{
namespace
{
void check_pairs(std::span<const double> truth, std::span<const double> pred)
{
        if (truth.empty())
        {
                throw DataError("no predictions to score");
        }
        if (truth.size() != pred.size())
        {
                throw DataError("truth and prediction counts differ");
        }
}

std::string fmt(double x)
{
        return format_number(x);
}
}

double diopters_to_meters(double diopters)
{
        return 1.0 / std::max(diopters, kMinPredictedDiopters);
}

double r_squared(std::span<const double> truth, std::span<const double> pred)
{
        check_pairs(truth, pred);
        const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
        double ss_res = 0.0;
        double ss_tot = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i)
        {
                ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
                ss_tot += (truth[i] - mean) * (truth[i] - mean);
        }
        if (!(ss_tot > 0.0))
        {
                throw DataError("R^2 undefined: truth values are constant");
        }
        return 1.0 - ss_res / ss_tot;
}

double rmse(std::span<const double> truth, std::span<const double> pred)
{
        check_pairs(truth, pred);
        double ss = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i)
        {
                ss += (truth[i] - pred[i]) * (truth[i] - pred[i]);
        }
        return std::sqrt(ss / static_cast<double>(truth.size()));
}

double median(std::vector<double> values)
{
        if (values.empty())
        {
                throw DataError("median of an empty set");
        }
        std::sort(values.begin(), values.end());
        const std::size_t n = values.size();
        return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

Metrics compute_metrics(std::span<const double> truth_m, std::span<const double> pred_m)
{
        check_pairs(truth_m, pred_m);
        Metrics m;
        m.count = truth_m.size();
        m.r2 = r_squared(truth_m, pred_m);
        m.rmse_m = rmse(truth_m, pred_m);
        std::vector<double> truth_d;
        std::vector<double> pred_d;
        std::vector<double> abs_err;
        for (std::size_t i = 0; i < truth_m.size(); ++i)
        {
                truth_d.push_back(1.0 / truth_m[i]);
                pred_d.push_back(1.0 / pred_m[i]);
                abs_err.push_back(std::abs(pred_m[i] - truth_m[i]));
        }
        m.rmse_diopters = rmse(truth_d, pred_d);
        m.median_abs_error_m = median(abs_err);
        return m;
}

EvalReport make_report(std::vector<PredictionRow> rows)
{
        EvalReport report;
        std::vector<double> truth;
        std::vector<double> pred;
        for (auto& row : rows)
        {
                row.err_m = row.pred_m - row.true_m;
                truth.push_back(row.true_m);
                pred.push_back(row.pred_m);
        }
        report.metrics = compute_metrics(truth, pred);
        report.rows = std::move(rows);
        return report;
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& model, const Manifest& test, int threads)
{
        if (test.rows.empty())
        {
                throw DataError("manifest " + test.root.string() + " is empty");
        }
        if (test.config.width != model.width || test.config.height != model.height)
        {
                throw ConfigError("data resolution " + std::to_string(test.config.width) + "x" +
                                  std::to_string(test.config.height) + " does not match model " +
                                  std::to_string(model.width) + "x" + std::to_string(model.height));
        }
        const Network<float> net(model, params);
        std::vector<PredictionRow> rows(test.rows.size());
        std::exception_ptr failure;
        std::mutex lock;
        auto work = [&](std::size_t first, std::size_t step) {
                try
                {
                        for (std::size_t i = first; i < rows.size(); i += step)
                        {
                                const auto& row = test.rows[i];
                                const Sample s = load_sample(test, row);
                                const double diopters = net.predict(prepare_input<float>(s, model));
                                rows[i] = {row.id, row.distance_m, diopters_to_meters(diopters), 0.0};
                        }
                }
                catch (...)
                {
                        std::lock_guard guard(lock);
                        failure = std::current_exception();
                }
        };
        const auto n_threads = static_cast<std::size_t>(std::max(1, threads));
        if (n_threads == 1)
        {
                work(0, 1);
        }
        else
        {
                std::vector<std::thread> pool;
                for (std::size_t t = 0; t < n_threads; ++t)
                {
                        pool.emplace_back(work, t, n_threads);
                }
                for (auto& th : pool)
                {
                        th.join();
                }
        }
        if (failure)
        {
                std::rethrow_exception(failure);
        }
        EvalReport report = make_report(std::move(rows));
        report.config = params.metadata;
        report.config.set("data.root", test.root.string());
        report.config.set("data.count", std::to_string(test.rows.size()));
        return report;
}

std::string format_metrics(const Metrics& metrics, const std::string& prefix)
{
        std::string out;
        out += prefix + "count=" + std::to_string(metrics.count) + "\n";
        out += prefix + "r2=" + fmt(metrics.r2) + "\n";
        out += prefix + "rmse_m=" + fmt(metrics.rmse_m) + "\n";
        out += prefix + "rmse_diopters=" + fmt(metrics.rmse_diopters) + "\n";
        out += prefix + "median_abs_error_m=" + fmt(metrics.median_abs_error_m) + "\n";
        return out;
}

void emit_report(const EvalReport& report, const std::filesystem::path& csv_path,
                 const std::optional<std::filesystem::path>& svg_path, double axis_min, double axis_max)
{
        std::string csv = "id,true_m,pred_m,err_m\n";
        for (const auto& row : report.rows)
        {
                csv += row.id + "," + fmt(row.true_m) + "," + fmt(row.pred_m) + "," + fmt(row.err_m) + "\n";
        }
        const Metrics& m = report.metrics;
        csv += "# count=" + std::to_string(m.count) + " r2=" + fmt(m.r2) + " rmse_m=" + fmt(m.rmse_m) +
               " rmse_diopters=" + fmt(m.rmse_diopters) + " median_abs_error_m=" + fmt(m.median_abs_error_m) + "\n";
        write_file_atomic(csv_path, csv);
        if (svg_path)
        {
                write_file_atomic(*svg_path, render_svg(report, axis_min, axis_max));
        }
}

std::vector<PredictionRow> read_report_csv(const std::filesystem::path& csv_path)
{
        std::istringstream in(read_file(csv_path));
        std::string line;
        if (!std::getline(in, line) || line != "id,true_m,pred_m,err_m")
        {
                throw FormatError(csv_path.string() + ": bad report header");
        }
        std::vector<PredictionRow> rows;
        while (std::getline(in, line))
        {
                if (line.empty() || line[0] == '#')
                {
                        continue;
                }
                std::istringstream fields(line);
                PredictionRow row;
                std::string t;
                std::string p;
                std::string e;
                if (!std::getline(fields, row.id, ',') || !std::getline(fields, t, ',') || !std::getline(fields, p, ',') ||
                    !std::getline(fields, e))
                {
                        throw FormatError(csv_path.string() + ": malformed row '" + line + "'");
                }
                try
                {
                        row.true_m = std::stod(t);
                        row.pred_m = std::stod(p);
                        row.err_m = std::stod(e);
                }
                catch (const std::logic_error&)
                {
                        throw FormatError(csv_path.string() + ": malformed row '" + line + "'");
                }
                rows.push_back(row);
        }
        return rows;
}

std::string render_svg(const EvalReport& report, double axis_min, double axis_max)
{
        // Plot area [60, 460] x [20, 420] px; data range padded by 10% on both ends.
        const double span = axis_max - axis_min;
        const double lo = axis_min - 0.1 * span;
        const double hi = axis_max + 0.1 * span;
        auto px = [&](double x) { return 60.0 + 400.0 * (std::clamp(x, lo, hi) - lo) / (hi - lo); };
        auto py = [&](double y) { return 420.0 - 400.0 * (std::clamp(y, lo, hi) - lo) / (hi - lo); };
        char buf[256];
        std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" "
                          "viewBox=\"0 0 480 480\">\n";
        svg += "<rect x=\"0\" y=\"0\" width=\"480\" height=\"480\" fill=\"white\"/>\n";
        svg += "<rect x=\"60\" y=\"20\" width=\"400\" height=\"400\" fill=\"none\" stroke=\"black\"/>\n";
        for (double tick = std::ceil(lo * 2.0) / 2.0; tick <= hi + 1e-9; tick += 0.5)
        {
                std::snprintf(buf, sizeof buf,
                              "<text x=\"%.2f\" y=\"438\" font-size=\"11\" text-anchor=\"middle\">%.1f</text>\n"
                              "<text x=\"52\" y=\"%.2f\" font-size=\"11\" text-anchor=\"end\">%.1f</text>\n",
                              px(tick), tick, py(tick) + 4.0, tick);
                svg += buf;
        }
        svg += "<text x=\"260\" y=\"462\" font-size=\"13\" text-anchor=\"middle\">true distance (m)</text>\n";
        svg += "<text x=\"16\" y=\"220\" font-size=\"13\" text-anchor=\"middle\" "
               "transform=\"rotate(-90 16 220)\">predicted distance (m)</text>\n";
        std::snprintf(buf, sizeof buf,
                      "<line class=\"identity\" data-x1=\"%g\" data-y1=\"%g\" data-x2=\"%g\" data-y2=\"%g\" "
                      "x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
                      axis_min, axis_min, axis_max, axis_max, px(axis_min), py(axis_min), px(axis_max),
                      py(axis_max));
        svg += buf;
        for (const auto& row : report.rows)
        {
                std::snprintf(buf, sizeof buf,
                              "<circle class=\"sample\" cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"steelblue\" "
                              "fill-opacity=\"0.7\"/>\n",
                              px(row.true_m), py(row.pred_m));
                svg += buf;
        }
        std::snprintf(buf, sizeof buf,
                      "<text x=\"70\" y=\"38\" font-size=\"12\">R2 = %.3f, RMSE = %.3f m, n = %zu</text>\n",
                      report.metrics.r2, report.metrics.rmse_m, report.metrics.count);
        svg += buf;
        svg += "</svg>\n";
        return svg;
}

ScaleEstimate closed_form_scale(const DisparityMap& observed, const SceneSpec& canonical, SceneVariant variant,
                                const ViewingGeometry& geom, double floor)
{
        if (observed.disparity.width() != geom.width() || observed.disparity.height() != geom.height())
        {
                throw InputError("observed map does not match the viewing geometry");
        }
        const CanonicalRender render = render_canonical(canonical, variant.removal, geom);
        const DepthMap canon = scale_render(render, variant.flipped, 1.0);
        const ViewingGeometry vg = variant_geometry(geom, variant);
        const Pixel fix = vg.fixation();
        if (!canon.mask(fix.u, fix.v))
        {
                throw DataError("no fixation surface");
        }
        const Vec3 f = canon.depth(fix.u, fix.v) * pixel_ray(vg, fix.u, fix.v);
        const double ipd = vg.ipd_m();
        const double fixation_term = small_angle_vergence(1.0, f);
        std::vector<double> estimates;
        for (int v = 0; v < geom.height(); ++v)
        {
                for (int u = 0; u < geom.width(); ++u)
                {
                        if ((u == fix.u && v == fix.v) || !canon.mask(u, v) || !observed.mask(u, v))
                        {
                                continue;
                        }
                        const double delta = observed.disparity(u, v);
                        if (!(std::abs(delta) > floor))
                        {
                                continue;
                        }
                        const Vec3 p = canon.depth(u, v) * pixel_ray(vg, u, v);
                        estimates.push_back(ipd * (small_angle_vergence(1.0, p) - fixation_term) / delta);
                }
        }
        if (estimates.size() < kMinUsablePixels)
        {
                throw SignalError("only " + std::to_string(estimates.size()) + " usable pixels (need " +
                                  std::to_string(kMinUsablePixels) + ")");
        }
        return {median(estimates), estimates.size()};
}

HelmholtzReport helmholtz_probe(const ModelParams& params, const ModelConfig& model, const SceneSpec& scene,
                                const ViewingGeometry& geom, std::span<const double> distances_m, double factor)
{
        if (!(factor > 0.0) || !std::isfinite(factor))
        {
                throw InputError("factor must be positive, got " + fmt(factor));
        }
        if (distances_m.empty())
        {
                throw DataError("no distances to probe");
        }
        if (geom.width() != model.width || geom.height() != model.height)
        {
                throw ConfigError("probe resolution does not match the model");
        }
        const Network<float> net(model, params);
        const ViewingGeometry probe_geom = geom.with_ipd(geom.ipd_m() * factor);
        const SceneVariant full{Removal::Full, false};
        const CanonicalRender render = render_canonical(scene, Removal::Full, probe_geom);
        HelmholtzReport report;
        report.factor = factor;
        for (double d : distances_m)
        {
                const Sample s = make_sample(render, scene, full, probe_geom, d);
                const double pred_m = diopters_to_meters(net.predict(prepare_input<float>(s, model)));
                report.distances_m.push_back(d);
                report.ratios.push_back(pred_m / d);
        }
        report.median_ratio = median(report.ratios);
        return report;
}

double mean_abs_disparity(const Sample& sample)
{
        double sum = 0.0;
        double count = 0.0;
        const auto d = sample.disparity.values();
        const auto m = sample.mask.values();
        for (std::size_t i = 0; i < d.size(); ++i)
        {
                if (m[i] > 0.0f)
                {
                        sum += std::abs(static_cast<double>(d[i]));
                        count += 1.0;
                }
        }
        if (count == 0.0)
        {
                throw DataError(sample.sample_id + " has no masked-in pixels");
        }
        return sum / count;
}

double LinearProbe::predict_m(double feature) const
{
        const double y = slope * feature + intercept;
        return in_diopters ? diopters_to_meters(y) : y;
}

LinearProbe fit_linear_probe(std::span<const double> features, std::span<const double> distances_m, bool in_diopters)
{
        check_pairs(features, distances_m);
        const double n = static_cast<double>(features.size());
        double mx = 0.0;
        double my = 0.0;
        for (std::size_t i = 0; i < features.size(); ++i)
        {
                mx += features[i];
                my += in_diopters ? 1.0 / distances_m[i] : distances_m[i];
        }
        mx /= n;
        my /= n;
        double sxy = 0.0;
        double sxx = 0.0;
        for (std::size_t i = 0; i < features.size(); ++i)
        {
                const double y = in_diopters ? 1.0 / distances_m[i] : distances_m[i];
                sxy += (features[i] - mx) * (y - my);
                sxx += (features[i] - mx) * (features[i] - mx);
        }
        if (!(sxx > 0.0))
        {
                throw DataError("probe feature is constant");
        }
        LinearProbe probe;
        probe.in_diopters = in_diopters;
        probe.slope = sxy / sxx;
        probe.intercept = my - probe.slope * mx;
        return probe;
}

double BaselineReport::best_probe_r2() const
{
        return std::max(probe_diopters_r2, probe_meters_r2);
}

BaselineReport evaluate_baselines(const Manifest& train, const Manifest& test)
{
        auto features_of = [](const Manifest& manifest, std::vector<double>& features, std::vector<double>& labels) {
                for (const auto& row : manifest.rows)
                {
                        features.push_back(mean_abs_disparity(load_sample(manifest, row)));
                        labels.push_back(row.distance_m);
                }
        };
        std::vector<double> train_x;
        std::vector<double> train_y;
        std::vector<double> test_x;
        std::vector<double> test_y;
        features_of(train, train_x, train_y);
        features_of(test, test_x, test_y);

        BaselineReport out;
        const double train_mean = std::accumulate(train_y.begin(), train_y.end(), 0.0) / static_cast<double>(train_y.size());
        out.mean_predictor_r2 = r_squared(test_y, std::vector<double>(test_y.size(), train_mean));
        for (const bool in_diopters : {true, false})
        {
                const LinearProbe probe = fit_linear_probe(train_x, train_y, in_diopters);
                std::vector<double> pred;
                for (double x : test_x)
                {
                        pred.push_back(probe.predict_m(x));
                }
                (in_diopters ? out.probe_diopters_r2 : out.probe_meters_r2) = r_squared(test_y, pred);
        }
        return out;
}
}
