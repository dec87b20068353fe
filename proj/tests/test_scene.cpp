#include "stereoscale/errors.hpp"
#include "stereoscale/io.hpp"
#include "stereoscale/random.hpp"
#include "stereoscale/scene.hpp"

#include <doctest.h>

#include <filesystem>

using namespace stereoscale;

namespace
{
// Point-membership tests written directly from the size conventions.
bool inside(const Primitive& p, const Vec3& q)
{
        const Vec3 d = q - p.center;
        switch (p.kind)
        {
        case PrimitiveKind::Sphere:
                return dot(d, d) <= p.size[0] * p.size[0];
        case PrimitiveKind::Box:
                return std::abs(d.x) <= p.size[0] && std::abs(d.y) <= p.size[1] && std::abs(d.z) <= p.size[2];
        case PrimitiveKind::Cylinder:
                return d.x * d.x + d.z * d.z <= p.size[0] * p.size[0] && std::abs(d.y) <= p.size[1];
        case PrimitiveKind::Jug:
        {
                const bool body = d.x * d.x + d.z * d.z <= p.size[0] * p.size[0] && std::abs(d.y) <= p.size[1];
                const Vec3 lid = q - Vec3{p.center.x, p.center.y + p.size[1], p.center.z};
                return body || dot(lid, lid) <= p.size[2] * p.size[2];
        }
        }
        return false;
}

Vec3 unit(const Vec3& v)
{
        return (1.0 / v.norm()) * v;
}

const std::filesystem::path& scratch()
{
        static const std::filesystem::path dir = [] {
                auto d = std::filesystem::temp_directory_path() / "stereoscale_test_scene";
                std::filesystem::remove_all(d);
                std::filesystem::create_directories(d);
                return d;
        }();
        return dir;
}
}

TEST_CASE("analytic intersections agree with a marched membership oracle")
{
        Rng rng(3);
        const std::vector<Primitive> prims = {
                {PrimitiveKind::Sphere, {0.1, -0.05, 1.0}, {0.2}, ObjectTag::Near},
                {PrimitiveKind::Box, {-0.2, 0.1, 1.3}, {0.15, 0.1, 0.2}, ObjectTag::Near},
                {PrimitiveKind::Cylinder, {0.05, -0.1, 0.9}, {0.12, 0.2}, ObjectTag::Far},
                {PrimitiveKind::Jug, {0.0, -0.15, 1.1}, {0.1, 0.12, 0.07}, ObjectTag::Central},
        };
        const double step = 2e-4;
        for (const Primitive& p : prims)
        {
                int agree = 0;
                int grazing = 0;
                for (int i = 0; i < 300; ++i)
                {
                        const Vec3 target = p.center + Vec3{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0.0};
                        const Vec3 dir = unit(target);
                        std::optional<double> marched;
                        for (double t = step; t < 3.0; t += step)
                        {
                                if (inside(p, t * dir))
                                {
                                        marched = t;
                                        break;
                                }
                        }
                        const auto hit = intersect(p, dir);
                        if (marched)
                        {
                                REQUIRE(hit.has_value());
                                CHECK(*hit <= *marched + 1e-12);
                                CHECK(*hit >= *marched - step - 1e-12);
                                ++agree;
                        }
                        else if (hit)
                        {
                                ++grazing; // chord shorter than the march step
                        }
                        else
                        {
                                ++agree;
                        }
                }
                CHECK(grazing <= 3);
                CHECK(agree >= 297);
        }
}

TEST_CASE("ground plane hit lies on the plane")
{
        SceneSpec s;
        s.ground_height = 0.4;
        const Vec3 down = unit(Vec3{0.1, -0.3, 1.0});
        const auto t = intersect_ground(s, down);
        REQUIRE(t);
        CHECK((*t * down).y == doctest::Approx(-0.4));
        CHECK_FALSE(intersect_ground(s, unit(Vec3{0.0, 0.1, 1.0})));
        s.ground_plane = false;
        CHECK_FALSE(intersect_ground(s, down));
}

TEST_CASE("generated scene: inventory, determinism and placement constraints")
{
        const SceneLayout layout;
        const SceneSpec a = generate_scene(7, {}, "train", layout);
        const SceneSpec b = generate_scene(7, {}, "train", layout);
        const SceneSpec c = generate_scene(8, {}, "train", layout);
        CHECK(a == b);
        CHECK_FALSE(a == c);
        int central = 0;
        int near = 0;
        int far = 0;
        for (const auto& p : a.primitives)
        {
                central += p.tag == ObjectTag::Central;
                near += p.tag == ObjectTag::Near;
                far += p.tag == ObjectTag::Far;
        }
        CHECK(central == 1);
        CHECK(near == Inventory{}.near_count);
        CHECK(far == Inventory{}.far_count);
        CHECK(a.primitives.front().tag == ObjectTag::Central);
        CHECK(a.primitives.front().kind == PrimitiveKind::Jug);

        const ViewingGeometry g(layout.width, layout.height);
        const CanonicalRender r = render_canonical(a, Removal::Full, g);
        const Pixel fix = g.fixation();
        CHECK(r.depth(fix.u, fix.v) == 1.0);
        CHECK(r.surface(fix.u, fix.v) == 0);
        double nearest = 1e9;
        for (int v = 0; v < g.height(); ++v)
        {
                for (int u = 0; u < g.width(); ++u)
                {
                        if (r.surface(u, v) != kSurfaceNone)
                        {
                                nearest = std::min(nearest, r.depth(u, v));
                        }
                }
        }
        CHECK(nearest >= layout.min_surface_distance - 1e-9);
}

TEST_CASE("scattered objects stay below eye level and rest on the ground")
{
        const SceneLayout layout;
        for (std::uint64_t seed : {1u, 2u, 3u})
        {
                const SceneSpec s = generate_scene(seed, {}, "s", layout);
                for (const auto& p : s.primitives)
                {
                        if (p.tag == ObjectTag::Central)
                        {
                                continue;
                        }
                        const double half = p.kind == PrimitiveKind::Sphere ? p.size[0] : p.size[1];
                        CHECK(p.center.y + half <= layout.max_top + 1e-12);
                        CHECK(p.center.y - half == doctest::Approx(-layout.ground_height).epsilon(1e-12));
                }
        }
}

TEST_CASE("generation errors name the seed")
{
        SceneLayout tight;
        tight.max_attempts = 1;
        tight.min_surface_distance = 5.0;
        CHECK_THROWS_WITH_AS(generate_scene(99, {}, "x", tight), doctest::Contains("99"), GenerationError);
        CHECK_THROWS_AS(generate_scene(1, {-1, 0}, "x"), InputError);
}

TEST_CASE("removal variants drop exactly their tagged objects")
{
        const SceneSpec s = generate_scene(4, {}, "train");
        const ViewingGeometry g(128, 128);
        for (Removal removal : {Removal::MinusNear, Removal::MinusFar})
        {
                const CanonicalRender r = render_canonical(s, removal, g);
                const ObjectTag dropped = removal == Removal::MinusNear ? ObjectTag::Near : ObjectTag::Far;
                for (int idx : r.surface.values())
                {
                        if (idx >= 0)
                        {
                                CHECK(s.primitives[static_cast<std::size_t>(idx)].tag != dropped);
                                CHECK(included_in(s.primitives[static_cast<std::size_t>(idx)], removal));
                        }
                }
        }
}

TEST_CASE("renders scale linearly and keep the same mask at every scale")
{
        const SceneSpec s = generate_scene(5, {}, "train");
        const ViewingGeometry g(96, 96);
        const CanonicalRender canonical = render_canonical(s, Removal::Full, g);
        const DepthMap unit_scale = render_depth(s, {}, g, 1.0);
        for (double scale : {0.25, 0.5, 1.0, 2.5})
        {
                const DepthMap d = render_depth(s, {}, g, scale);
                CHECK(d.mask == unit_scale.mask);
                for (int v = 0; v < g.height(); ++v)
                {
                        for (int u = 0; u < g.width(); ++u)
                        {
                                if (d.mask(u, v))
                                {
                                        CHECK(d.depth(u, v) == scale * canonical.depth(u, v));
                                }
                        }
                }
        }
        CHECK_THROWS_AS(render_depth(s, {}, g, 0.0), InputError);
}

TEST_CASE("flipped variants are exact mirror images")
{
        const SceneSpec s = generate_scene(6, {}, "train");
        const ViewingGeometry g(64, 48);
        for (Removal removal : {Removal::Full, Removal::MinusNear, Removal::MinusFar})
        {
                const DepthMap plain = render_depth(s, {removal, false}, g, 0.7);
                const DepthMap flipped = render_depth(s, {removal, true}, g, 0.7);
                CHECK(flipped.depth == plain.depth.flipped_horizontally());
                CHECK(flipped.mask == plain.mask.flipped_horizontally());
        }
        CHECK(variant_geometry(g, {Removal::Full, true}).fixation() == g.mirrored().fixation());
}

TEST_CASE("six variants in order")
{
        const auto all = SceneVariant::all();
        CHECK(all[0] == SceneVariant{Removal::Full, false});
        CHECK(all[1] == SceneVariant{Removal::MinusNear, false});
        CHECK(all[2] == SceneVariant{Removal::MinusFar, false});
        CHECK(all[3] == SceneVariant{Removal::Full, true});
        CHECK(all[5] == SceneVariant{Removal::MinusFar, true});
        CHECK(parse_removal(to_string(Removal::MinusNear)) == Removal::MinusNear);
        CHECK_THROWS(parse_removal("sideways"));
}

TEST_CASE("rearranged scene keeps the inventory but moves objects")
{
        const SceneSpec base = generate_scene(9, {}, "train");
        const SceneSpec moved = rearranged_scene(base, 123);
        CHECK(moved.scene_id == "train-rearranged-123");
        REQUIRE(moved.primitives.size() == base.primitives.size());
        int moved_count = 0;
        for (std::size_t i = 0; i < base.primitives.size(); ++i)
        {
                CHECK(moved.primitives[i].kind == base.primitives[i].kind);
                CHECK(moved.primitives[i].tag == base.primitives[i].tag);
                CHECK(moved.primitives[i].size == base.primitives[i].size);
                moved_count += !(moved.primitives[i].center == base.primitives[i].center);
        }
        CHECK(moved_count >= static_cast<int>(base.primitives.size()) - 1);
        CHECK(rearranged_scene(base, 123) == moved);
}

TEST_CASE("scene JSON round trip and malformed input")
{
        const SceneSpec s = generate_scene(10, {}, "train");
        const auto path = (scratch() / "scene.json").string();
        save_scene(s, path);
        CHECK(load_scene(path) == s);
        write_file_atomic(scratch() / "bad.json", "{\"scene_id\": 3");
        CHECK_THROWS_AS(load_scene((scratch() / "bad.json").string()), FormatError);
        write_file_atomic(scratch() / "bad_kind.json",
                          "{\"scene_id\":\"x\",\"seed\":1,\"ground_plane\":true,\"ground_height\":0.4,"
                          "\"primitives\":[{\"kind\":\"torus\",\"center\":[0,0,1],\"size\":[1],\"tag\":\"near\"}]}");
        CHECK_THROWS_AS(load_scene((scratch() / "bad_kind.json").string()), Error);
}
