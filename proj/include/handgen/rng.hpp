#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "tensor.hpp"

namespace handgen {

// splitmix64 step, also used as a general 64-bit mixer.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t mix64(uint64_t x) {
    return splitmix64(x);
}

// FNV-1a over a string, for deriving stream seeds from labels.
inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic random stream. All sampling in the project flows through this
// type; the standard-library distributions are implementation-defined, so the
// normal sampler is spelled out here to keep runs reproducible everywhere.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : state_(seed ^ 0x5851f42d4c957f2dULL) {
        // warm up so that small seeds diverge immediately
        splitmix64(state_);
        splitmix64(state_);
    }

    // derive an independent stream from a label (and optional index)
    RandomStream fork(const std::string& label, uint64_t index = 0) const {
        uint64_t s = state_;
        s ^= fnv1a(label);
        s ^= mix64(index + 0x9e3779b97f4a7c15ULL);
        return RandomStream(mix64(s));
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1), 53-bit resolution
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) { // [0, n)
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    // Box-Muller; one value per call, the pair partner is cached.
    real normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        real u1 = uniform();
        real u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        real r = std::sqrt(-2.0 * std::log(u1));
        real a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    void fill_normal(Tensor& t) {
        for (auto& x : t.v) x = normal();
    }

    void fill_uniform(Tensor& t, real lo, real hi) {
        for (auto& x : t.v) x = uniform(lo, hi);
    }

    Tensor randn(std::vector<int> shape) {
        Tensor t(std::move(shape));
        fill_normal(t);
        return t;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    real spare_ = 0.0;
};

// Stateless stream derivation: hash a root seed with a label and index. Used
// by training so that resuming from step k replays exactly the same draws.
inline RandomStream derived_stream(uint64_t root_seed, const std::string& label, uint64_t index = 0) {
    uint64_t s = mix64(root_seed ^ fnv1a(label));
    s = mix64(s + index * 0x9e3779b97f4a7c15ULL + 1);
    return RandomStream(s);
}

} // namespace handgen
