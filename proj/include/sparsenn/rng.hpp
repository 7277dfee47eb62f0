#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sparsenn {

// Deterministic random helpers. The mt19937_64 engine is bit-exact across
// platforms by the standard; std:: distributions are not, so every
// conversion from raw engine output lives here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0,1) with 53 random bits
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

    // Box-Muller without a cached spare so the state is just the engine
    double normal() {
        double u1 = uniform();
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 eng_;
};

} // namespace sparsenn
