#include "stereoscale/geometry.hpp"

#include "stereoscale/errors.hpp"

#include <cmath>
#include <string>

namespace stereoscale
{
ViewingGeometry::ViewingGeometry(int width, int height, double ipd_m, double fov_h_deg)
        : ViewingGeometry(width, height, ipd_m, fov_h_deg, Pixel{width / 2, height / 2})
{
}

ViewingGeometry::ViewingGeometry(int width, int height, double ipd_m, double fov_h_deg, Pixel fixation)
        : ipd_m_(ipd_m), fov_h_deg_(fov_h_deg), width_(width), height_(height), fixation_(fixation)
{
        validate();
}

void ViewingGeometry::validate() const
{
        if (!(ipd_m_ > 0) || !std::isfinite(ipd_m_))
        {
                throw InputError("ipd_m must be positive, got " + std::to_string(ipd_m_));
        }
        if (!(fov_h_deg_ > 0 && fov_h_deg_ < 180))
        {
                throw InputError("fov_h_deg must lie in (0, 180), got " + std::to_string(fov_h_deg_));
        }
        if (width_ < 2 || height_ < 2)
        {
                throw InputError("grid must be at least 2x2, got " + std::to_string(width_) + "x" +
                                 std::to_string(height_));
        }
        if (!contains(fixation_.u, fixation_.v))
        {
                throw InputError("fixation pixel (" + std::to_string(fixation_.u) + "," +
                                 std::to_string(fixation_.v) + ") outside the grid");
        }
}

ViewingGeometry ViewingGeometry::with_ipd(double ipd_m) const
{
        return ViewingGeometry(width_, height_, ipd_m, fov_h_deg_, fixation_);
}

ViewingGeometry ViewingGeometry::with_fixation(Pixel fixation) const
{
        return ViewingGeometry(width_, height_, ipd_m_, fov_h_deg_, fixation);
}

ViewingGeometry ViewingGeometry::mirrored() const
{
        return with_fixation({width_ - 1 - fixation_.u, fixation_.v});
}

Vec3 pixel_ray(const ViewingGeometry& geom, int u, int v)
{
        if (!geom.contains(u, v))
        {
                throw InputError("pixel (" + std::to_string(u) + "," + std::to_string(v) + ") outside " +
                                 std::to_string(geom.width()) + "x" + std::to_string(geom.height()) + " grid");
        }
        // Offsets from the image center are exact in binary, so mirrored pixels get exactly negated x.
        const double half_width = 0.5 * geom.width();
        const double pitch = std::tan(deg_to_rad(0.5 * geom.fov_h_deg())) / half_width;
        const double x = ((u + 0.5) - half_width) * pitch;
        const double y = -((v + 0.5) - 0.5 * geom.height()) * pitch;
        const double inv_norm = 1.0 / std::sqrt(x * x + y * y + 1.0);
        return {x * inv_norm, y * inv_norm, inv_norm};
}

double vergence_angle(const ViewingGeometry& geom, const Vec3& point)
{
        // With eyes at (+-h, 0, 0): |(L-p) x (R-p)| = ipd * rho and (L-p).(R-p) = x^2 + rho^2 - h^2.
        const double rho = std::hypot(point.y, point.z);
        if (!(rho > 0) || !std::isfinite(rho) || !std::isfinite(point.x))
        {
                throw DomainError("vergence undefined for a point on the interocular axis");
        }
        const double h = 0.5 * geom.ipd_m();
        return std::atan2(geom.ipd_m() * rho, point.x * point.x + rho * rho - h * h);
}

double small_angle_vergence(double ipd_m, const Vec3& point)
{
        const double rho = std::hypot(point.y, point.z);
        if (!(rho > 0))
        {
                throw DomainError("vergence undefined for a point on the interocular axis");
        }
        return ipd_m * rho / dot(point, point);
}

DisparityMap disparity_from_depth(const ViewingGeometry& geom, const DepthMap& depth, double fixation_distance_m)
{
        if (!(fixation_distance_m > 0) || !std::isfinite(fixation_distance_m))
        {
                throw DomainError("fixation distance must be positive, got " + std::to_string(fixation_distance_m));
        }
        const int w = geom.width();
        const int h = geom.height();
        if (depth.depth.width() != w || depth.depth.height() != h || depth.mask.width() != w ||
            depth.mask.height() != h)
        {
                throw DataError("depth map " + std::to_string(depth.depth.width()) + "x" +
                                std::to_string(depth.depth.height()) + " does not match geometry " +
                                std::to_string(w) + "x" + std::to_string(h));
        }
        const Pixel fix = geom.fixation();
        if (!depth.mask(fix.u, fix.v))
        {
                throw DataError("no fixation surface at pixel (" + std::to_string(fix.u) + "," +
                                std::to_string(fix.v) + ")");
        }

        const double fixation_vergence = vergence_angle(geom, fixation_distance_m * pixel_ray(geom, fix.u, fix.v));

        DisparityMap out{Grid<double>(w, h, 0.0), depth.mask};
        for (int v = 0; v < h; ++v)
        {
                for (int u = 0; u < w; ++u)
                {
                        if (!depth.mask(u, v))
                        {
                                continue;
                        }
                        const double r = depth.depth(u, v);
                        if (!(r > 0) || !std::isfinite(r))
                        {
                                throw DataError("non-positive depth " + std::to_string(r) + " at pixel (" +
                                                std::to_string(u) + "," + std::to_string(v) + ")");
                        }
                        out.disparity(u, v) = vergence_angle(geom, r * pixel_ray(geom, u, v)) - fixation_vergence;
                }
        }
        // The fixation pixel is the zero reference.
        out.disparity(fix.u, fix.v) = 0.0;
        return out;
}

double small_angle_disparity(double ipd_m, double d_m, double f_m)
{
        if (!(d_m > 0) || !(f_m > 0))
        {
                throw DomainError("distances must be positive");
        }
        return ipd_m * (1.0 / d_m - 1.0 / f_m);
}

double radial_to_z(const ViewingGeometry& geom, int u, int v, double radial_m)
{
        return radial_m * pixel_ray(geom, u, v).z;
}
}
