#pragma once

// Independent reference computations shared by the unit and acceptance tests. Nothing here
// calls into the library's geometry code.

#include <array>
#include <cmath>

namespace oracle
{
using V3 = std::array<double, 3>;

inline V3 sub(const V3& a, const V3& b)
{
        return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

inline double dot(const V3& a, const V3& b)
{
        return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline V3 cross(const V3& a, const V3& b)
{
        return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double norm(const V3& a)
{
        return std::sqrt(dot(a, a));
}

// Angle between the two eye-to-point vectors; atan2 keeps precision near zero.
inline double angle_between_eyes(double ipd, const V3& p)
{
        const V3 left = sub({-ipd / 2, 0, 0}, p);
        const V3 right = sub({ipd / 2, 0, 0}, p);
        return std::atan2(norm(cross(left, right)), dot(left, right));
}

// Pinhole ray through pixel (u, v): image plane at z = 1, half-width tan(fov/2).
inline V3 ray(int width, int height, double fov_deg, int u, int v)
{
        const double half = std::tan(fov_deg * M_PI / 360.0);
        const double x = (2.0 * (u + 0.5) / width - 1.0) * half;
        const double y = -(2.0 * (v + 0.5) - height) / width * half;
        const double n = std::sqrt(x * x + y * y + 1.0);
        return {x / n, y / n, 1.0 / n};
}

inline V3 scale(double s, const V3& a)
{
        return {s * a[0], s * a[1], s * a[2]};
}
}
