#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace advprop {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Stream ids for seed derivation. Every source of randomness in a run is a
/// pure function of (config seed, stream, epoch, step), which is what makes
/// checkpoints resumable without storing generator state.
enum class SeedStream : uint64_t {
    param_init = 1,
    epoch_order = 2,
    batch_split = 3,
    attack_noise = 4,
    shard_shuffle = 5,
    target_labels = 6,
    data_synth = 7,
    corruption = 8,
};

inline uint64_t derive_seed(uint64_t base, SeedStream stream, uint64_t a = 0, uint64_t b = 0) {
    uint64_t s = splitmix64(base);
    s = splitmix64(s ^ static_cast<uint64_t>(stream));
    s = splitmix64(s ^ a);
    s = splitmix64(s ^ b);
    return s;
}

/// Deterministic generator. Distributions are hand-rolled on top of
/// mt19937_64 because the std distribution objects are implementation
/// defined and would break bit-reproducibility across toolchains.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0,1) with 53 random bits.
    double next_unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    /// Box-Muller, second value cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [0, n). Modulo bias is ~n/2^64, irrelevant here.
    uint64_t below(uint64_t n) { return gen_() % n; }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline std::vector<int> random_permutation(int n, uint64_t seed) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    Rng rng(seed);
    rng.shuffle(p);
    return p;
}

}  // namespace advprop
