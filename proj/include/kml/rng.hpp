#pragma once

#include <cstdint>
#include <cmath>
#include <string>
#include <random>
#include <vector>

namespace kml {

// Deterministic RNG. mt19937_64 is fully specified by the standard, but the
// <random> distributions are not, so every draw we need is implemented here
// on top of the raw 64-bit stream. Same seed => same sequence everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1) with 53 bits of mantissa
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal, Box-Muller; the cached spare keeps draw count explicit
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // index in [0, n); modulo bias is ~n/2^64, irrelevant at our sizes
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    // weighted index over non-negative weights (at least one positive)
    std::size_t weighted_index(const std::vector<double>& w) {
        double total = 0.0;
        for (double x : w) total += x;
        double r = uniform() * total;
        for (std::size_t i = 0; i + 1 < w.size(); ++i) {
            r -= w[i];
            if (r < 0.0) return i;
        }
        return w.empty() ? 0 : w.size() - 1;
    }

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// splitmix64; used to derive independent child seeds from (seed, label)
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Labeled child seed: deterministic, order-independent substreams
// (e.g. one stream per relation, one per epoch).
inline std::uint64_t child_seed(std::uint64_t seed, const std::string& label) {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a over the label
    for (unsigned char c : label) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return mix_seed(seed ^ h);
}

} // namespace kml
