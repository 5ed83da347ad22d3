#include "latentlm/rng.hpp"

#include <sstream>

#include "latentlm/errors.hpp"

namespace latentlm {

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

Rng Rng::stream(std::uint64_t master, std::uint64_t stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(stream_id), static_cast<std::uint32_t>(stream_id >> 32),
                      0x6c6c6d75u};
    Rng rng;
    rng.engine_.seed(seq);
    return rng;
}

double Rng::uniform() {
    // 53 random mantissa bits
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() { return normal_(engine_); }

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw ArgumentError("uniform_index: empty range");
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
}

Rng Rng::deserialize(std::string_view text) {
    std::istringstream is{std::string(text)};
    Rng rng;
    is >> rng.engine_ >> rng.normal_;
    if (!is) throw FormatError("rng state: malformed serialization");
    return rng;
}

bool Rng::operator==(const Rng& other) const {
    return engine_ == other.engine_ && normal_ == other.normal_;
}

}  // namespace latentlm
