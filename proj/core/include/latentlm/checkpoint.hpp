#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latentlm/optim.hpp"

namespace latentlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
    std::string name;
    ad::Shape shape;
    std::vector<double> values;
};

struct OptimizerRecord {
    std::uint64_t step = 0;
    std::vector<Moments> moments;
};

/// Everything needed to rebuild and continue a run. Values are stored as
/// 64-bit floats, so round trips are bit-exact.
struct Checkpoint {
    std::string kind;         // "latentlm" or "sigma_vae"
    std::string config_text;  // canonical config snapshot
    std::vector<TensorRecord> tensors;
    std::optional<OptimizerRecord> optimizer;
    std::string rng_state;
    std::uint64_t step = 0;
};

/// "LLMCKPT1" magic, u32 version, payload, trailing CRC-32.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// VersionError on a different format version, CorruptionError on a bad
/// checksum, FormatError on anything else malformed.
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

std::vector<TensorRecord> snapshot(const ParamList& params);
/// Copies tensors into `params` by name; names and shapes must match exactly.
void restore(ParamList& params, const std::vector<TensorRecord>& tensors);

}  // namespace latentlm
