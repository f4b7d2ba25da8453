#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ehr {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Thrown when a metric is undefined for the given inputs (e.g. AUROC with a
// single class present).
struct MetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stateless 64-bit mix (splitmix64 finalizer).
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// All module/stream seeds are derived from one global seed so that a single
// --seed flag pins every random choice in a pipeline.
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index = 0) {
    uint64_t h = mix64(base ^ fnv1a64(tag));
    return mix64(h ^ mix64(index));
}

// Deterministic RNG with self-contained distributions. std distributions are
// implementation-defined, so everything here is built directly on the
// mt19937_64 stream to keep artifacts byte-stable.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) throw NumericError("Rng::below requires n > 0");
        const uint64_t limit =
            std::numeric_limits<uint64_t>::max() - std::numeric_limits<uint64_t>::max() % n;
        uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return x % n;
    }

    // Inclusive bounds.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (hi < lo) throw NumericError("Rng::uniform_int requires lo <= hi");
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
    }

    // [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        // Box-Muller, no caching so the stream position is call-count linear.
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct elements, order given by a partial Fisher-Yates pass.
    template <class T>
    std::vector<T> sample(std::vector<T> pool, size_t k) {
        if (k > pool.size()) throw NumericError("Rng::sample: k exceeds pool size");
        for (size_t i = 0; i < k; ++i) {
            const size_t j = i + static_cast<size_t>(below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace ehr
