#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace emodel {

/// Independent random stream for one trajectory.
///
/// Algorithm: std::mt19937_64 seeded through std::seed_seq with the 32-bit
/// halves of (master seed, stream index). Both the engine and seed_seq are
/// fully specified by the C++ standard, and doubles are formed from the top 53
/// bits by hand, so a given (seed, stream, draw index) yields the same value on
/// every conforming platform.
class RngStream {
public:
    static constexpr std::string_view algorithm = "mt19937_64/seed_seq(seed_lo,seed_hi,stream_lo,stream_hi)/53bit";

    RngStream(std::uint64_t master_seed, std::uint64_t stream)
        : seed_(master_seed), stream_(stream), engine_(make_engine(master_seed, stream)) {}

    std::uint64_t master_seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1].
    double uniform_open_closed() { return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53; }

private:
    static std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        return std::mt19937_64(seq);
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
};

} // namespace emodel
