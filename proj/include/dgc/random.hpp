#pragma once

#include <cstdint>
#include <random>

namespace dgc {

using Rng = std::mt19937_64;

/// Streams split from one root seed. Each consumer gets its own engine so that
/// adding draws in one place never shifts another consumer's sequence.
enum class Stream : std::uint64_t {
    Environment = 1,
    Policy = 2,
    Noise = 3,
    Init = 4,
    Shuffle = 5,
    Episode = 6,
};

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream, std::uint64_t index = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline std::uint64_t derive_seed(std::uint64_t root, Stream stream, std::uint64_t index = 0) {
    return derive_seed(root, static_cast<std::uint64_t>(stream), index);
}

inline Rng make_rng(std::uint64_t root, Stream stream, std::uint64_t index = 0) {
    return Rng(derive_seed(root, stream, index));
}

}  // namespace dgc
