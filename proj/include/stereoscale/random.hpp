#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

namespace stereoscale
{
// Child seed for a named stream; keeps e.g. training and test draws disjoint under one base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream)
{
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char c : stream)
        {
                h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
        }
        std::uint64_t z = base ^ h;
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
}

// mt19937_64 output is fixed by the standard; the conversions below are ours, so streams
// are identical across standard libraries.
class Rng
{
public:
        explicit Rng(std::uint64_t seed) : engine_(seed) {}

        // Uniform in [0, 1).
        double uniform()
        {
                return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        }

        double uniform(double lo, double hi)
        {
                return lo + (hi - lo) * uniform();
        }

        // Uniform integer in [0, n).
        std::uint64_t below(std::uint64_t n)
        {
                const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                            std::numeric_limits<std::uint64_t>::max() % n;
                std::uint64_t x;
                do
                {
                        x = engine_();
                } while (x >= limit);
                return x % n;
        }

        template <typename It>
        void shuffle(It first, It last)
        {
                const auto n = static_cast<std::uint64_t>(last - first);
                for (std::uint64_t i = n; i > 1; --i)
                {
                        std::swap(first[i - 1], first[below(i)]);
                }
        }

private:
        std::mt19937_64 engine_;
};
}
