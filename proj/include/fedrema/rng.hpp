#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedrema {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Mixes a master seed with stream coordinates (round, client id, purpose tag)
// into an independent child seed. Order of the coordinates matters.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> coords) {
    std::uint64_t h = splitmix64(master);
    for (auto c : coords) h = splitmix64(h ^ splitmix64(c + 0x632BE59BD9B4E019ULL));
    return h;
}

// Purpose tags for derive_seed so that independent consumers never share a stream.
enum class Stream : std::uint64_t {
    model_init = 1,
    synthetic_data = 2,
    partition = 3,
    client_train = 4,
    probe = 5,
};

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    return derive_seed(master, {static_cast<std::uint64_t>(stream), a, b});
}

}  // namespace fedrema
