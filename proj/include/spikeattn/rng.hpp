#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace spikeattn {

// Seeded RNG wrapper. std::mt19937_64 itself is fully specified by the
// standard; the distributions are hand-rolled because std::normal_distribution
// and friends are implementation-defined and would break bit-level
// reproducibility across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, cache discarded for simplicity.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = gen_() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream (e.g. one per clip) without correlating
    // consecutive seeds.
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace spikeattn
