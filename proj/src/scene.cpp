#include "stereoscale/scene.hpp"

#include "stereoscale/errors.hpp"
#include "stereoscale/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace stereoscale
{
namespace
{
constexpr double kMinHit = 1e-9;
// Fixation hits within this of canonical 1 are snapped to exactly 1.
constexpr double kFixationSnap = 1e-9;

struct Candidate
{
        std::optional<double> t;

        void offer(std::optional<double> hit)
        {
                if (hit && (!t || *hit < *t))
                {
                        t = hit;
                }
        }
};

std::optional<double> smallest_positive(double t0, double t1)
{
        if (t0 > t1)
        {
                std::swap(t0, t1);
        }
        if (t0 > kMinHit)
        {
                return t0;
        }
        if (t1 > kMinHit)
        {
                return t1;
        }
        return std::nullopt;
}

std::optional<double> intersect_sphere(const Vec3& center, double radius, const Vec3& dir)
{
        // |t d - c|^2 = r^2 with |d| = 1
        const double b = dot(dir, center);
        const double c = dot(center, center) - radius * radius;
        const double disc = b * b - c;
        if (disc < 0)
        {
                return std::nullopt;
        }
        const double s = std::sqrt(disc);
        return smallest_positive(b - s, b + s);
}

std::optional<double> intersect_box(const Vec3& center, const std::vector<double>& half, const Vec3& dir)
{
        double t_near = -std::numeric_limits<double>::infinity();
        double t_far = std::numeric_limits<double>::infinity();
        const double d[3] = {dir.x, dir.y, dir.z};
        const double c[3] = {center.x, center.y, center.z};
        for (int axis = 0; axis < 3; ++axis)
        {
                const double lo = c[axis] - half[axis];
                const double hi = c[axis] + half[axis];
                if (d[axis] == 0)
                {
                        if (0 < lo || 0 > hi)
                        {
                                return std::nullopt;
                        }
                        continue;
                }
                double t0 = lo / d[axis];
                double t1 = hi / d[axis];
                if (t0 > t1)
                {
                        std::swap(t0, t1);
                }
                t_near = std::max(t_near, t0);
                t_far = std::min(t_far, t1);
        }
        if (t_near > t_far)
        {
                return std::nullopt;
        }
        return smallest_positive(t_near, t_far);
}

// Vertical capped cylinder.
std::optional<double> intersect_cylinder(const Vec3& center, double radius, double half_height, const Vec3& dir)
{
        const double y_lo = center.y - half_height;
        const double y_hi = center.y + half_height;
        Candidate best;

        const double a = dir.x * dir.x + dir.z * dir.z;
        if (a > 0)
        {
                const double b = dir.x * center.x + dir.z * center.z;
                const double c = center.x * center.x + center.z * center.z - radius * radius;
                const double disc = b * b - a * c;
                if (disc >= 0)
                {
                        const double s = std::sqrt(disc);
                        for (const double t : {(b - s) / a, (b + s) / a})
                        {
                                const double y = t * dir.y;
                                if (t > kMinHit && y >= y_lo && y <= y_hi)
                                {
                                        best.offer(t);
                                }
                        }
                }
        }
        if (dir.y != 0)
        {
                for (const double plane : {y_lo, y_hi})
                {
                        const double t = plane / dir.y;
                        if (t <= kMinHit)
                        {
                                continue;
                        }
                        const double dx = t * dir.x - center.x;
                        const double dz = t * dir.z - center.z;
                        if (dx * dx + dz * dz <= radius * radius)
                        {
                                best.offer(t);
                        }
                }
        }
        return best.t;
}

double bounding_radius_xz(const Primitive& p)
{
        switch (p.kind)
        {
        case PrimitiveKind::Sphere:
        case PrimitiveKind::Cylinder:
                return p.size[0];
        case PrimitiveKind::Box:
                return std::hypot(p.size[0], p.size[2]);
        case PrimitiveKind::Jug:
                return std::max(p.size[0], p.size[2]);
        }
        return 0;
}

double half_height(const Primitive& p)
{
        switch (p.kind)
        {
        case PrimitiveKind::Sphere:
                return p.size[0];
        case PrimitiveKind::Box:
                return p.size[1];
        case PrimitiveKind::Cylinder:
        case PrimitiveKind::Jug:
                return p.size[1];
        }
        return 0;
}

// Distance from the cyclopean origin to the closest point of the primitive.
double nearest_surface_distance(const Primitive& p)
{
        const Vec3& c = p.center;
        switch (p.kind)
        {
        case PrimitiveKind::Sphere:
                return c.norm() - p.size[0];
        case PrimitiveKind::Box:
        {
                const auto gap = [](double center, double half) { return std::max(0.0, std::abs(center) - half); };
                return Vec3{gap(c.x, p.size[0]), gap(c.y, p.size[1]), gap(c.z, p.size[2])}.norm();
        }
        case PrimitiveKind::Cylinder:
        case PrimitiveKind::Jug:
        {
                const double radial = std::max(0.0, std::hypot(c.x, c.z) - p.size[0]);
                const double vertical = std::max(0.0, std::abs(c.y) - p.size[1]);
                return std::hypot(radial, vertical);
        }
        }
        return 0;
}

std::size_t size_arity(PrimitiveKind kind)
{
        switch (kind)
        {
        case PrimitiveKind::Sphere:
                return 1;
        case PrimitiveKind::Box:
                return 3;
        case PrimitiveKind::Cylinder:
                return 2;
        case PrimitiveKind::Jug:
                return 3;
        }
        return 0;
}

Vec3 fixation_direction(const SceneLayout& layout)
{
        const ViewingGeometry geom(layout.width, layout.height, ViewingGeometry::kDefaultIpd, layout.fov_h_deg);
        return pixel_ray(geom, geom.fixation().u, geom.fixation().v);
}

Primitive make_jug(const SceneLayout& layout)
{
        constexpr double radius = 0.07;
        constexpr double lid_radius = 0.06;
        constexpr double top = 0.10;
        const Vec3 dir = fixation_direction(layout);
        // Body axis set back by one radius along the fixation ray's horizontal heading, so the
        // ray enters the body at t = 1.
        const double heading = std::hypot(dir.x, dir.z);
        const double reach = 1.0 + radius / heading;
        const double body_half = 0.5 * (top + layout.ground_height);
        Primitive jug;
        jug.kind = PrimitiveKind::Jug;
        jug.center = {dir.x * reach, top - body_half, dir.z * reach};
        jug.size = {radius, body_half, lid_radius};
        jug.tag = ObjectTag::Central;
        return jug;
}

std::vector<double> sample_size(PrimitiveKind kind, double distance, double height_scale, Rng& rng)
{
        // distance already folds in the layout's object_scale
        switch (kind)
        {
        case PrimitiveKind::Sphere:
                return {distance * rng.uniform(0.05, 0.10)};
        case PrimitiveKind::Box:
                return {distance * rng.uniform(0.04, 0.09), height_scale * distance * rng.uniform(0.04, 0.14),
                        distance * rng.uniform(0.04, 0.09)};
        case PrimitiveKind::Cylinder:
                return {distance * rng.uniform(0.035, 0.07), height_scale * distance * rng.uniform(0.06, 0.16)};
        case PrimitiveKind::Jug:
                break;
        }
        throw GenerationError("jug is not a scatter primitive");
}

// Rests the primitive on the ground at a random azimuth and center distance drawn from its
// tag's range; false when the constraints fail.
bool try_place(Primitive& p, const SceneLayout& layout, const std::vector<Primitive>& placed, const Vec3& fix_dir,
               Rng& rng, double distance)
{
        const double y = -layout.ground_height + half_height(p);
        if (y + half_height(p) > layout.max_top || distance <= std::abs(y))
        {
                return false;
        }
        const double planar = std::sqrt(distance * distance - y * y);
        const double max_azimuth = deg_to_rad(0.45 * layout.fov_h_deg);
        const double azimuth = rng.uniform(-max_azimuth, max_azimuth);
        p.center = {planar * std::sin(azimuth), y, planar * std::cos(azimuth)};

        if (nearest_surface_distance(p) < layout.min_surface_distance)
        {
                return false;
        }
        if (const auto hit = intersect(p, fix_dir); hit && *hit <= 1.0 + 1e-6)
        {
                return false;
        }
        for (const Primitive& other : placed)
        {
                if (other.tag != ObjectTag::Central)
                {
                        continue;
                }
                const double gap = std::hypot(p.center.x - other.center.x, p.center.z - other.center.z);
                if (gap < bounding_radius_xz(p) + bounding_radius_xz(other) + 0.01)
                {
                        return false;
                }
        }
        return true;
}

std::pair<double, double> distance_range(ObjectTag tag, const SceneLayout& layout)
{
        if (tag == ObjectTag::Near)
        {
                return {layout.near_min, layout.near_max};
        }
        return {layout.far_min, layout.far_max};
}

void place_or_throw(Primitive& p, const SceneLayout& layout, const std::vector<Primitive>& placed,
                    const Vec3& fix_dir, Rng& rng, std::uint64_t seed, bool resample_size)
{
        const auto [lo, hi] = distance_range(p.tag, layout);
        for (int attempt = 0; attempt < layout.max_attempts; ++attempt)
        {
                const double offset = (hi - lo) * std::pow(rng.uniform(), layout.depth_clustering);
                const double distance = p.tag == ObjectTag::Near ? hi - offset : lo + offset;
                if (resample_size)
                {
                        p.size = sample_size(p.kind, distance * layout.object_scale,
                                             layout.height_scale, rng);
                }
                if (try_place(p, layout, placed, fix_dir, rng, distance))
                {
                        return;
                }
        }
        throw GenerationError("could not place " + to_string(p.tag) + " " + to_string(p.kind) + " after " +
                              std::to_string(layout.max_attempts) + " attempts (seed " + std::to_string(seed) + ")");
}

template <typename Enum, std::size_t N>
Enum parse_enum(const std::string& s, const std::array<Enum, N>& options, const char* what)
{
        for (const Enum e : options)
        {
                if (to_string(e) == s)
                {
                        return e;
                }
        }
        throw FormatError(std::string("unknown ") + what + " '" + s + "'");
}
}

std::array<SceneVariant, 6> SceneVariant::all()
{
        return {{{Removal::Full, false},
                 {Removal::MinusNear, false},
                 {Removal::MinusFar, false},
                 {Removal::Full, true},
                 {Removal::MinusNear, true},
                 {Removal::MinusFar, true}}};
}

std::string to_string(PrimitiveKind kind)
{
        switch (kind)
        {
        case PrimitiveKind::Sphere:
                return "sphere";
        case PrimitiveKind::Box:
                return "box";
        case PrimitiveKind::Cylinder:
                return "cylinder";
        case PrimitiveKind::Jug:
                return "jug";
        }
        return "?";
}

std::string to_string(ObjectTag tag)
{
        switch (tag)
        {
        case ObjectTag::Central:
                return "central";
        case ObjectTag::Near:
                return "near";
        case ObjectTag::Far:
                return "far";
        case ObjectTag::Ground:
                return "ground";
        }
        return "?";
}

std::string to_string(Removal removal)
{
        switch (removal)
        {
        case Removal::Full:
                return "full";
        case Removal::MinusNear:
                return "minus_near";
        case Removal::MinusFar:
                return "minus_far";
        }
        return "?";
}

PrimitiveKind parse_primitive_kind(const std::string& s)
{
        return parse_enum(s,
                          std::array{PrimitiveKind::Sphere, PrimitiveKind::Box, PrimitiveKind::Cylinder,
                                     PrimitiveKind::Jug},
                          "primitive kind");
}

ObjectTag parse_object_tag(const std::string& s)
{
        return parse_enum(s, std::array{ObjectTag::Central, ObjectTag::Near, ObjectTag::Far, ObjectTag::Ground},
                          "object tag");
}

Removal parse_removal(const std::string& s)
{
        return parse_enum(s, std::array{Removal::Full, Removal::MinusNear, Removal::MinusFar}, "variant");
}

std::optional<double> intersect(const Primitive& p, const Vec3& dir)
{
        switch (p.kind)
        {
        case PrimitiveKind::Sphere:
                return intersect_sphere(p.center, p.size[0], dir);
        case PrimitiveKind::Box:
                return intersect_box(p.center, p.size, dir);
        case PrimitiveKind::Cylinder:
                return intersect_cylinder(p.center, p.size[0], p.size[1], dir);
        case PrimitiveKind::Jug:
        {
                Candidate best;
                best.offer(intersect_cylinder(p.center, p.size[0], p.size[1], dir));
                const Vec3 lid_center{p.center.x, p.center.y + p.size[1], p.center.z};
                best.offer(intersect_sphere(lid_center, p.size[2], dir));
                return best.t;
        }
        }
        return std::nullopt;
}

std::optional<double> intersect_ground(const SceneSpec& scene, const Vec3& dir)
{
        if (!scene.ground_plane || !(dir.y < 0))
        {
                return std::nullopt;
        }
        return -scene.ground_height / dir.y;
}

bool included_in(const Primitive& p, Removal removal)
{
        switch (removal)
        {
        case Removal::Full:
                return true;
        case Removal::MinusNear:
                return p.tag != ObjectTag::Near;
        case Removal::MinusFar:
                return p.tag != ObjectTag::Far;
        }
        return true;
}

SceneSpec generate_scene(std::uint64_t seed, const Inventory& inventory, const std::string& scene_id,
                         const SceneLayout& layout)
{
        if (inventory.near_count < 0 || inventory.far_count < 0)
        {
                throw InputError("object counts must be non-negative");
        }
        Rng rng(derive_seed(seed, "scene"));
        SceneSpec scene;
        scene.scene_id = scene_id;
        scene.seed = seed;
        scene.ground_plane = true;
        scene.ground_height = layout.ground_height;
        scene.primitives.push_back(make_jug(layout));

        const Vec3 fix_dir = fixation_direction(layout);
        constexpr std::array kinds{PrimitiveKind::Sphere, PrimitiveKind::Box, PrimitiveKind::Cylinder};
        const auto add = [&](ObjectTag tag) {
                Primitive p;
                p.kind = kinds[rng.below(kinds.size())];
                p.tag = tag;
                place_or_throw(p, layout, scene.primitives, fix_dir, rng, seed, true);
                scene.primitives.push_back(std::move(p));
        };
        for (int i = 0; i < inventory.near_count; ++i)
        {
                add(ObjectTag::Near);
        }
        for (int i = 0; i < inventory.far_count; ++i)
        {
                add(ObjectTag::Far);
        }
        return scene;
}

SceneSpec rearranged_scene(const SceneSpec& base, std::uint64_t seed, const SceneLayout& layout)
{
        const auto central = std::count_if(base.primitives.begin(), base.primitives.end(),
                                           [](const Primitive& p) { return p.tag == ObjectTag::Central; });
        if (central != 1)
        {
                throw InputError("scene '" + base.scene_id + "' must contain exactly one central primitive");
        }
        SceneLayout effective = layout;
        effective.ground_height = base.ground_height;

        Rng rng(derive_seed(seed, "rearrange"));
        const Vec3 fix_dir = fixation_direction(effective);
        SceneSpec out;
        out.scene_id = base.scene_id + "-rearranged-" + std::to_string(seed);
        out.seed = seed;
        out.ground_plane = base.ground_plane;
        out.ground_height = base.ground_height;
        for (const Primitive& p : base.primitives)
        {
                if (p.tag == ObjectTag::Central || p.tag == ObjectTag::Ground)
                {
                        out.primitives.push_back(p);
                }
        }
        for (const Primitive& p : base.primitives)
        {
                if (p.tag == ObjectTag::Near || p.tag == ObjectTag::Far)
                {
                        Primitive moved = p;
                        place_or_throw(moved, effective, out.primitives, fix_dir, rng, seed, false);
                        out.primitives.push_back(std::move(moved));
                }
        }
        return out;
}

CanonicalRender render_canonical(const SceneSpec& scene, Removal removal, const ViewingGeometry& geom)
{
        const int w = geom.width();
        const int h = geom.height();
        CanonicalRender out{Grid<double>(w, h, 0.0), Grid<int>(w, h, kSurfaceNone)};
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < scene.primitives.size(); ++i)
        {
                if (included_in(scene.primitives[i], removal))
                {
                        active.push_back(i);
                }
        }
        for (int v = 0; v < h; ++v)
        {
                for (int u = 0; u < w; ++u)
                {
                        const Vec3 dir = pixel_ray(geom, u, v);
                        double best = std::numeric_limits<double>::infinity();
                        int surface = kSurfaceNone;
                        for (const std::size_t i : active)
                        {
                                if (const auto t = intersect(scene.primitives[i], dir); t && *t < best)
                                {
                                        best = *t;
                                        surface = static_cast<int>(i);
                                }
                        }
                        if (const auto t = intersect_ground(scene, dir); t && *t < best)
                        {
                                best = *t;
                                surface = kSurfaceGround;
                        }
                        if (surface != kSurfaceNone)
                        {
                                out.depth(u, v) = best;
                                out.surface(u, v) = surface;
                        }
                }
        }

        const Pixel fix = geom.fixation();
        const int s = out.surface(fix.u, fix.v);
        if (s >= 0 && scene.primitives[static_cast<std::size_t>(s)].tag == ObjectTag::Central &&
            std::abs(out.depth(fix.u, fix.v) - 1.0) <= kFixationSnap)
        {
                out.depth(fix.u, fix.v) = 1.0;
        }
        return out;
}

DepthMap render_depth(const SceneSpec& scene, SceneVariant variant, const ViewingGeometry& geom, double scale_m)
{
        if (!(scale_m > 0) || !std::isfinite(scale_m))
        {
                throw InputError("scale must be positive, got " + std::to_string(scale_m));
        }
        return scale_render(render_canonical(scene, variant.removal, geom), variant.flipped, scale_m);
}

DepthMap scale_render(const CanonicalRender& canonical, bool flipped, double scale_m)
{
        if (!(scale_m > 0) || !std::isfinite(scale_m))
        {
                throw InputError("scale must be positive, got " + std::to_string(scale_m));
        }
        const int width = canonical.depth.width();
        const int height = canonical.depth.height();
        DepthMap out{Grid<double>(width, height, 0.0), Grid<std::uint8_t>(width, height, 0)};
        for (int v = 0; v < height; ++v)
        {
                for (int u = 0; u < width; ++u)
                {
                        if (canonical.surface(u, v) != kSurfaceNone)
                        {
                                out.depth(u, v) = scale_m * canonical.depth(u, v);
                                out.mask(u, v) = 1;
                        }
                }
        }
        if (flipped)
        {
                out.depth = out.depth.flipped_horizontally();
                out.mask = out.mask.flipped_horizontally();
        }
        return out;
}

ViewingGeometry variant_geometry(const ViewingGeometry& geom, SceneVariant variant)
{
        return variant.flipped ? geom.mirrored() : geom;
}

std::string scene_to_json(const SceneSpec& scene)
{
        nlohmann::ordered_json j;
        j["scene_id"] = scene.scene_id;
        j["seed"] = scene.seed;
        j["ground_plane"] = scene.ground_plane;
        j["ground_height"] = scene.ground_height;
        auto prims = nlohmann::ordered_json::array();
        for (const Primitive& p : scene.primitives)
        {
                nlohmann::ordered_json jp;
                jp["kind"] = to_string(p.kind);
                jp["center"] = {p.center.x, p.center.y, p.center.z};
                jp["size"] = p.size;
                jp["tag"] = to_string(p.tag);
                prims.push_back(std::move(jp));
        }
        j["primitives"] = std::move(prims);
        return j.dump(2) + "\n";
}

SceneSpec scene_from_json(const std::string& text)
{
        SceneSpec scene;
        try
        {
                const auto j = nlohmann::json::parse(text);
                scene.scene_id = j.at("scene_id").get<std::string>();
                scene.seed = j.at("seed").get<std::uint64_t>();
                scene.ground_plane = j.at("ground_plane").get<bool>();
                scene.ground_height = j.at("ground_height").get<double>();
                for (const auto& jp : j.at("primitives"))
                {
                        Primitive p;
                        p.kind = parse_primitive_kind(jp.at("kind").get<std::string>());
                        const auto c = jp.at("center").get<std::vector<double>>();
                        if (c.size() != 3)
                        {
                                throw FormatError("primitive center must have 3 components");
                        }
                        p.center = {c[0], c[1], c[2]};
                        p.size = jp.at("size").get<std::vector<double>>();
                        if (p.size.size() != size_arity(p.kind))
                        {
                                throw FormatError(to_string(p.kind) + " size needs " +
                                                  std::to_string(size_arity(p.kind)) + " values");
                        }
                        p.tag = parse_object_tag(jp.at("tag").get<std::string>());
                        scene.primitives.push_back(std::move(p));
                }
        }
        catch (const nlohmann::json::exception& e)
        {
                throw FormatError(std::string("scene json: ") + e.what());
        }
        if (!(scene.ground_height > 0))
        {
                throw FormatError("scene json: ground_height must be positive");
        }
        return scene;
}

void save_scene(const SceneSpec& scene, const std::string& path)
{
        const std::string tmp = path + ".tmp";
        {
                std::ofstream out(tmp, std::ios::binary);
                out << scene_to_json(scene);
                if (!out)
                {
                        throw IoError("cannot write " + tmp);
                }
        }
        std::filesystem::rename(tmp, path);
}

SceneSpec load_scene(const std::string& path)
{
        std::ifstream in(path, std::ios::binary);
        if (!in)
        {
                throw IoError("cannot open " + path);
        }
        std::stringstream buffer;
        buffer << in.rdbuf();
        return scene_from_json(buffer.str());
}
}
