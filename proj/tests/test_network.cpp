#include "stereoscale/errors.hpp"
#include "stereoscale/network.hpp"

#include "toy_model.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace stereoscale;

TEST_CASE("backward matches central differences on every tensor")
{
        // Step 1e-3 is only an oracle where no ReLU switches within the step, so the check points are
        // seeds whose perturbations leave every activation pattern unchanged.
        const auto checks = toy::kink_free_checks(4, 1e-3);
        REQUIRE(checks.size() == 4);
        for (const auto& [seed, check] : checks)
        {
                CHECK(check.relative_error.size() == 8);
                for (const auto& [name, err] : check.relative_error)
                {
                        INFO(seed << " " << name);
                        CHECK(err <= 1e-4);
                }
        }
}

TEST_CASE("smaller steps agree at arbitrary points, kinks included")
{
        const ModelConfig cfg = toy::config();
        for (std::uint64_t seed : {1u, 2u, 3u})
        {
                const ModelParams params = build_model(cfg, seed);
                const std::vector<ModelInput<double>> inputs = {toy::input<double>(cfg, 10 * seed),
                                                                toy::input<double>(cfg, 10 * seed + 1),
                                                                toy::input<double>(cfg, 10 * seed + 2)};
                const auto check = toy::gradient_check(cfg, params, inputs, {0.5, 2.0, 3.5}, 1e-5);
                for (const auto& [name, err] : check.relative_error)
                {
                        INFO(seed << " " << name);
                        CHECK(err <= 1e-6);
                }
        }
}

TEST_CASE("float and double networks agree")
{
        const ModelConfig cfg = toy::config();
        const ModelParams params = build_model(cfg, 4);
        const Network<float> f(cfg, params);
        const Network<double> d(cfg, params);
        for (std::uint64_t s = 0; s < 5; ++s)
        {
                CHECK(f.predict(toy::input<float>(cfg, s)) ==
                      doctest::Approx(d.predict(toy::input<double>(cfg, s))).epsilon(1e-5));
        }
}

TEST_CASE("predict is pure and forward agrees with it")
{
        const ModelConfig cfg = toy::config();
        const Network<double> net(cfg, build_model(cfg, 4));
        const auto in = toy::input<double>(cfg, 3);
        Network<double>::Workspace ws;
        const double a = net.predict(in);
        CHECK(net.forward(in, ws) == a);
        CHECK(net.predict(in) == a);
}

TEST_CASE("zero disparity gives the same prediction for any fully valid mask")
{
        const ModelConfig cfg = toy::config();
        const Network<double> net(cfg, build_model(cfg, 8));
        const Grid<float> zero(16, 16, 0.0f);
        const Grid<float> ones(16, 16, 1.0f);
        const double p = net.predict(prepare_input<double>(zero, ones, cfg));
        CHECK(std::isfinite(p));
        CHECK(net.predict(prepare_input<double>(zero, ones, cfg)) == p);
}

TEST_CASE("masked-out disparities do not affect the prediction")
{
        const ModelConfig cfg = toy::config();
        const Network<double> net(cfg, build_model(cfg, 8));
        Grid<float> disparity(16, 16, 0.01f);
        Grid<float> mask(16, 16, 1.0f);
        mask(3, 4) = 0.0f;
        const double a = net.predict(prepare_input<double>(disparity, mask, cfg));
        disparity(3, 4) = 5.0f;
        CHECK(net.predict(prepare_input<double>(disparity, mask, cfg)) == a);
}

TEST_CASE("duplicating a sample leaves the mean loss and gradient unchanged")
{
        const ModelConfig cfg = toy::config();
        const Network<double> net(cfg, build_model(cfg, 2));
        const auto in = toy::input<double>(cfg, 1);
        const std::vector<const ModelInput<double>*> one = {&in};
        const std::vector<const ModelInput<double>*> two = {&in, &in};
        const std::vector<double> t1 = {1.0};
        const std::vector<double> t2 = {1.0, 1.0};
        auto g1 = net.zero_gradients();
        auto g2 = net.zero_gradients();
        const double l1 = batch_loss<double>(net, one, t1, g1);
        const double l2 = batch_loss<double>(net, two, t2, g2);
        CHECK(l1 == doctest::Approx(l2).epsilon(1e-14));
        for (std::size_t t = 0; t < g1.size(); ++t)
        {
                for (std::size_t i = 0; i < g1[t].size(); ++i)
                {
                        CHECK(g1[t][i] == doctest::Approx(g2[t][i]).epsilon(1e-12));
                }
        }
}

TEST_CASE("input and parameter errors")
{
        const ModelConfig cfg = toy::config();
        const ModelParams params = build_model(cfg, 1);
        const Network<double> net(cfg, params);
        CHECK_THROWS_AS(prepare_input<double>(Grid<float>(8, 8), Grid<float>(8, 8), cfg), InputError);
        CHECK_THROWS_AS(net.predict(prepare_input<double>(Grid<float>(16, 16), Grid<float>(16, 16), cfg)),
                        DataError);

        ModelParams broken = params;
        for (float& v : broken.tensors[2].values)
        {
                v = std::numeric_limits<float>::max();
        }
        for (float& v : broken.tensors[0].values)
        {
                v = std::numeric_limits<float>::max();
        }
        const Network<float> overflow(cfg, broken);
        CHECK_THROWS_WITH_AS(overflow.predict(toy::input<float>(cfg, 1)), doctest::Contains("layer"), NumericalError);

        ModelConfig other = cfg;
        other.stage_channels = {3, 5, 2};
        CHECK_THROWS_AS(Network<double>(other, params), FormatError);
}
