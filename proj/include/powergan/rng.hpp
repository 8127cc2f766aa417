#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <string>
#include <string_view>

namespace powergan {

// Seeded random stream. The engine (mt19937_64) is fully specified by the
// standard; the distributions below are written out so that draws are
// identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; no cached second value, so the stream
    // state is exactly the engine state.
    double normal();

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    // Fisher-Yates, drawing index(i) for i = n .. 2.
    template <class Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

    std::string state() const;
    void set_state(const std::string& state);

    // Derive an independent seed for a named substream, e.g.
    // Rng::derive(root, "latent", {stage, epoch}).
    static std::uint64_t derive(std::uint64_t root, std::string_view stream,
                                std::initializer_list<std::uint64_t> keys = {});

private:
    std::mt19937_64 engine_;
};

}  // namespace powergan
