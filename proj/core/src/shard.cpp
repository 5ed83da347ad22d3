#include "latentlm/shard.hpp"

#include "binary_io.hpp"

namespace latentlm::data {

namespace {
constexpr std::string_view kMagic = "LLMSHARD";
constexpr std::uint8_t kDiscreteTag = 0, kContinuousTag = 1;
}  // namespace

std::vector<std::uint8_t> encode_shard(const std::vector<MixedSequence>& sequences) {
    io::ByteWriter w;
    w.raw(kMagic);
    w.u32(kShardVersion);
    w.u64(sequences.size());
    for (const auto& seq : sequences) {
        const std::size_t len_at = w.size();
        w.u32(0);
        w.u32(static_cast<std::uint32_t>(seq.size()));
        for (const auto& e : seq) {
            if (const auto* id = std::get_if<TokenId>(&e)) {
                w.u8(kDiscreteTag);
                w.u32(raw(*id));
            } else {
                const auto& z = std::get<LatentVec>(e);
                w.u8(kContinuousTag);
                w.u32(static_cast<std::uint32_t>(z.size()));
                for (double v : z) w.f32(static_cast<float>(v));
            }
        }
        w.patch_u32(len_at, static_cast<std::uint32_t>(w.size() - len_at - 4));
    }
    w.append_crc();
    return std::move(w.bytes());
}

std::vector<MixedSequence> decode_shard(const std::vector<std::uint8_t>& bytes) {
    auto r = io::open_container(bytes, kMagic, kShardVersion, "shard");
    const auto n = r.u64();
    std::vector<MixedSequence> out;
    for (std::uint64_t i = 0; i < n; ++i) {
        const auto record_at = r.pos();
        const auto len = r.u32();
        r.need(len);
        const auto end = r.pos() + len;
        const auto count = r.u32();
        MixedSequence seq;
        for (std::uint32_t k = 0; k < count; ++k) {
            const auto tag = r.u8();
            if (tag == kDiscreteTag) {
                seq.emplace_back(token(r.u32()));
            } else if (tag == kContinuousTag) {
                const auto dim = r.u32();
                r.need(static_cast<std::size_t>(dim) * 4);
                LatentVec z(dim);
                for (auto& v : z) v = r.f32();
                seq.emplace_back(std::move(z));
            } else {
                r.fail("unknown element tag " + std::to_string(tag));
            }
        }
        if (r.pos() != end) {
            throw FormatError("shard: record starting at offset " + std::to_string(record_at) +
                              " has inconsistent length");
        }
        out.push_back(std::move(seq));
    }
    if (r.remaining() != 0) r.fail("trailing bytes after the last record");
    return out;
}

void write_shard(const std::string& path, const std::vector<MixedSequence>& sequences) {
    io::write_file(path, encode_shard(sequences));
}

std::vector<MixedSequence> read_shard(const std::string& path) { return decode_shard(io::read_file(path)); }

}  // namespace latentlm::data
