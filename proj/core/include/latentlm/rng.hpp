#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace latentlm {

/// Seedable random stream. The whole state (engine plus the cached normal
/// deviate) round-trips through serialize()/deserialize().
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    /// Independent stream derived from (master, stream_id); used to give each
    /// example its own generator so results do not depend on batch order.
    static Rng stream(std::uint64_t master, std::uint64_t stream_id);

    double uniform();  // [0, 1)
    double normal();   // N(0, 1)
    std::size_t uniform_index(std::size_t n);
    std::uint64_t next_u64() { return engine_(); }

    std::string serialize() const;
    static Rng deserialize(std::string_view text);

    bool operator==(const Rng& other) const;

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace latentlm
