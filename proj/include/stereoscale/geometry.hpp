#pragma once

#include "stereoscale/grid.hpp"

#include <cmath>
#include <cstdint>

namespace stereoscale
{
struct Vec3
{
        double x = 0;
        double y = 0;
        double z = 0;

        friend Vec3 operator+(const Vec3& a, const Vec3& b)
        {
                return {a.x + b.x, a.y + b.y, a.z + b.z};
        }
        friend Vec3 operator-(const Vec3& a, const Vec3& b)
        {
                return {a.x - b.x, a.y - b.y, a.z - b.z};
        }
        friend Vec3 operator*(double s, const Vec3& a)
        {
                return {s * a.x, s * a.y, s * a.z};
        }
        friend double dot(const Vec3& a, const Vec3& b)
        {
                return a.x * b.x + a.y * b.y + a.z * b.z;
        }
        double norm() const
        {
                return std::sqrt(dot(*this, *this));
        }
        bool operator==(const Vec3&) const = default;
};

struct Pixel
{
        int u = 0;
        int v = 0;
        bool operator==(const Pixel&) const = default;
};

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg_to_rad(double deg)
{
        return deg * (kPi / 180.0);
}

inline constexpr double rad_to_deg(double rad)
{
        return rad * (180.0 / kPi);
}

// Observer: eyes at (+-ipd/2, 0, 0) around the cyclopean origin, looking down +Z,
// +X right, +Y up. Pixel rows grow downward.
class ViewingGeometry
{
public:
        static constexpr double kDefaultIpd = 0.064;
        static constexpr double kDefaultFovDeg = 56.0;

        ViewingGeometry() : ViewingGeometry(256, 256) {}

        // Fixation defaults to the image center pixel (width/2, height/2).
        ViewingGeometry(int width, int height, double ipd_m = kDefaultIpd, double fov_h_deg = kDefaultFovDeg);
        ViewingGeometry(int width, int height, double ipd_m, double fov_h_deg, Pixel fixation);

        double ipd_m() const noexcept
        {
                return ipd_m_;
        }
        double fov_h_deg() const noexcept
        {
                return fov_h_deg_;
        }
        int width() const noexcept
        {
                return width_;
        }
        int height() const noexcept
        {
                return height_;
        }
        Pixel fixation() const noexcept
        {
                return fixation_;
        }
        double degrees_per_pixel() const noexcept
        {
                return fov_h_deg_ / width_;
        }

        bool contains(int u, int v) const noexcept
        {
                return u >= 0 && v >= 0 && u < width_ && v < height_;
        }

        ViewingGeometry with_ipd(double ipd_m) const;
        ViewingGeometry with_fixation(Pixel fixation) const;
        // Fixation moved to its horizontal mirror pixel; pairs with Grid::flipped_horizontally.
        ViewingGeometry mirrored() const;

        bool operator==(const ViewingGeometry&) const = default;

private:
        void validate() const;

        double ipd_m_;
        double fov_h_deg_;
        int width_;
        int height_;
        Pixel fixation_;
};

struct DepthMap
{
        Grid<double> depth; // radial distance from the cyclopean origin, meters
        Grid<std::uint8_t> mask;
};

// Fixation-relative vergence difference, radians; positive = nearer than fixation.
struct DisparityMap
{
        Grid<double> disparity;
        Grid<std::uint8_t> mask;
};

// Unit direction through the center of pixel (u, v) under a tan-mapped pinhole.
Vec3 pixel_ray(const ViewingGeometry& geom, int u, int v);

// Full angle at `point` subtended by the two eyes.
double vergence_angle(const ViewingGeometry& geom, const Vec3& point);

DisparityMap disparity_from_depth(const ViewingGeometry& geom, const DepthMap& depth, double fixation_distance_m);

// Small-angle law ipd * (1/d - 1/f).
double small_angle_disparity(double ipd_m, double d_m, double f_m);

// Small-angle vergence ipd * rho / |p|^2 with rho the distance from the interocular axis;
// reduces to ipd / z on the median plane.
double small_angle_vergence(double ipd_m, const Vec3& point);

// z-depth of a radial depth sample; debugging aid.
double radial_to_z(const ViewingGeometry& geom, int u, int v, double radial_m);
}
