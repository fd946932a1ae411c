#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace latentfair {

// Seeded random source with a portable draw sequence: the engine is
// mt19937_64 and the transforms below are spelled out, so the stream does not
// depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n).
    std::size_t below(std::size_t n);
    // Box-Muller; one normal per call, no cached pair so state() stays exact.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    std::string state() const;
    void set_state(const std::string& s);

    // Independent child stream derived from this seed and a tag.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag);

private:
    std::mt19937_64 engine_;
};

}  // namespace latentfair
