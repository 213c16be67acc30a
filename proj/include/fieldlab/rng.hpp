#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "fieldlab/tensor.hpp"

namespace fieldlab {

/// Counter-based deterministic generator. State transitions are pure
/// integer arithmetic, so a seed fully determines the stream on every
/// platform. Streams are split by hashing a tag into a child seed, which
/// keeps independent consumers (data, init, probes) from perturbing each
/// other when one of them draws more values.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() { return mix(seed_, counter_++); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; one fresh pair per call.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double rademacher() { return (next_u64() & 1u) ? 1.0 : -1.0; }

    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            std::int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

    Tensor normal_tensor(Shape s, double stddev = 1.0) {
        Tensor out = Tensor::zeros(std::move(s));
        for (auto& v : out.data) v = stddev * normal();
        return out;
    }

    Tensor uniform_tensor(Shape s, double lo, double hi) {
        Tensor out = Tensor::zeros(std::move(s));
        for (auto& v : out.data) v = uniform(lo, hi);
        return out;
    }

    Tensor rademacher_tensor(Shape s) {
        Tensor out = Tensor::zeros(std::move(s));
        for (auto& v : out.data) v = rademacher();
        return out;
    }

    /// Child generator for an independent stream.
    Rng split(std::uint64_t stream) const { return Rng(mix(seed_ ^ 0x5851f42d4c957f2dULL, stream)); }

    Rng split(std::string_view tag) const { return split(fnv1a(tag)); }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

  private:
    // splitmix64-style avalanche over (seed, counter).
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace fieldlab
