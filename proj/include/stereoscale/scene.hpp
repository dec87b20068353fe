#pragma once

#include "stereoscale/geometry.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stereoscale
{
enum class PrimitiveKind
{
        Sphere,
        Box,
        Cylinder,
        Jug,
};

enum class ObjectTag
{
        Central,
        Near,
        Far,
        Ground,
};

// size semantics per kind:
//   sphere   {radius}
//   box      {half_x, half_y, half_z}
//   cylinder {radius, half_height}       vertical axis through center
//   jug      {radius, half_height, lid_radius}   cylinder body capped by a sphere centered on its top face
struct Primitive
{
        PrimitiveKind kind = PrimitiveKind::Sphere;
        Vec3 center;
        std::vector<double> size;
        ObjectTag tag = ObjectTag::Near;

        bool operator==(const Primitive&) const = default;
};

// Canonical units: the fixation surface sits at radial distance 1.
struct SceneSpec
{
        std::string scene_id;
        std::uint64_t seed = 0;
        std::vector<Primitive> primitives;
        bool ground_plane = true;
        double ground_height = 0.4; // plane y = -ground_height

        bool operator==(const SceneSpec&) const = default;
};

enum class Removal
{
        Full,
        MinusNear,
        MinusFar,
};

struct SceneVariant
{
        Removal removal = Removal::Full;
        bool flipped = false;

        bool operator==(const SceneVariant&) const = default;

        // The six training variants in order: full, minus-near, minus-far, then their flips.
        static std::array<SceneVariant, 6> all();
};

std::string to_string(PrimitiveKind kind);
std::string to_string(ObjectTag tag);
std::string to_string(Removal removal);
PrimitiveKind parse_primitive_kind(const std::string& s);
ObjectTag parse_object_tag(const std::string& s);
Removal parse_removal(const std::string& s);

struct Inventory
{
        int near_count = 8;
        int far_count = 8;
};

// Placement constraints shared by generation and rearrangement.
struct SceneLayout
{
        double near_min = 0.55; // canonical center-distance ranges
        double near_max = 0.95;
        double far_min = 1.05;
        double far_max = 2.2;
        // No surface nearer than this; keeps the nearest points inside the small-angle regime at 25 cm.
        double min_surface_distance = 0.62;
        double ground_height = 0.4;
        // Multiplies sampled object sizes (sizes also grow with center distance).
        double object_scale = 1.5;
        // Vertical stretch of boxes and cylinders.
        double height_scale = 0.8;
        // Exponent p >= 1 skewing center distances toward the fixation depth: the offset from the
        // range end nearest 1 is (range width) * U^p.
        double depth_clustering = 1.0;
        // Scattered objects must top out below this height (eye level is y = 0).
        double max_top = -0.02;
        double fov_h_deg = ViewingGeometry::kDefaultFovDeg;
        // Resolution whose fixation pixel ray the central jug is fitted to.
        int width = 256;
        int height = 256;
        int max_attempts = 2000;
};

SceneSpec generate_scene(std::uint64_t seed, const Inventory& inventory, const std::string& scene_id,
                         const SceneLayout& layout = {});

SceneSpec rearranged_scene(const SceneSpec& base, std::uint64_t seed, const SceneLayout& layout = {});

// Nearest hit distance t > 0 along a unit ray from the cyclopean origin, if any.
std::optional<double> intersect(const Primitive& primitive, const Vec3& dir);
std::optional<double> intersect_ground(const SceneSpec& scene, const Vec3& dir);

bool included_in(const Primitive& primitive, Removal removal);

// Canonical render before flipping; `surface` holds the primitive index hit, -1 for ground, -2 for none.
struct CanonicalRender
{
        Grid<double> depth;
        Grid<int> surface;
};

inline constexpr int kSurfaceGround = -1;
inline constexpr int kSurfaceNone = -2;

CanonicalRender render_canonical(const SceneSpec& scene, Removal removal, const ViewingGeometry& geom);

DepthMap render_depth(const SceneSpec& scene, SceneVariant variant, const ViewingGeometry& geom, double scale_m);
// Metric depth from a canonical render: depth = scale * canonical, mirrored when `flipped`.
DepthMap scale_render(const CanonicalRender& canonical, bool flipped, double scale_m);

// Geometry whose fixation pixel matches a variant's render (mirrored for flipped variants).
ViewingGeometry variant_geometry(const ViewingGeometry& geom, SceneVariant variant);

std::string scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const std::string& text);
void save_scene(const SceneSpec& scene, const std::string& path);
SceneSpec load_scene(const std::string& path);
}
