#include "latentlm/checkpoint.hpp"

#include <algorithm>

#include "binary_io.hpp"

namespace latentlm {

namespace {
constexpr std::string_view kMagic = "LLMCKPT1";

void put_values(io::ByteWriter& w, const std::vector<double>& v) {
    w.u64(v.size());
    for (double x : v) w.f64(x);
}

std::vector<double> get_values(io::ByteReader& r) {
    const auto n = r.u64();
    r.need(n * 8);
    std::vector<double> v(n);
    for (auto& x : v) x = r.f64();
    return v;
}
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    io::ByteWriter w;
    w.raw(kMagic);
    w.u32(kCheckpointVersion);
    w.str(ckpt.kind);
    w.str(ckpt.config_text);
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& t : ckpt.tensors) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.u64(d);
        put_values(w, t.values);
    }
    w.u8(ckpt.optimizer ? 1 : 0);
    if (ckpt.optimizer) {
        w.u64(ckpt.optimizer->step);
        w.u32(static_cast<std::uint32_t>(ckpt.optimizer->moments.size()));
        for (const auto& m : ckpt.optimizer->moments) {
            put_values(w, m.m);
            put_values(w, m.v);
        }
    }
    w.str(ckpt.rng_state);
    w.u64(ckpt.step);
    w.append_crc();
    return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    auto r = io::open_container(bytes, kMagic, kCheckpointVersion, "checkpoint");
    Checkpoint c;
    c.kind = r.str();
    c.config_text = r.str();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        TensorRecord t;
        t.name = r.str();
        const auto nd = r.u32();
        for (std::uint32_t k = 0; k < nd; ++k) t.shape.push_back(r.u64());
        const auto at = r.pos();
        t.values = get_values(r);
        if (ad::shape_numel(t.shape) != t.values.size()) {
            throw FormatError("checkpoint: tensor '" + t.name + "' at offset " + std::to_string(at) +
                              " has a value count that disagrees with its shape");
        }
        c.tensors.push_back(std::move(t));
    }
    const auto has_opt = r.u8();
    if (has_opt > 1) r.fail("bad optimizer flag");
    if (has_opt) {
        OptimizerRecord o;
        o.step = r.u64();
        const auto k = r.u32();
        for (std::uint32_t i = 0; i < k; ++i) {
            Moments m;
            m.m = get_values(r);
            m.v = get_values(r);
            o.moments.push_back(std::move(m));
        }
        c.optimizer = std::move(o);
    }
    c.rng_state = r.str();
    c.step = r.u64();
    if (r.remaining() != 0) r.fail("trailing bytes");
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { io::write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

std::vector<TensorRecord> snapshot(const ParamList& params) {
    std::vector<TensorRecord> out;
    for (const auto& p : params) {
        out.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
    }
    return out;
}

void restore(ParamList& params, const std::vector<TensorRecord>& tensors) {
    if (tensors.size() != params.size()) {
        throw FormatError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                          std::to_string(params.size()));
    }
    for (auto& p : params) {
        auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == p.name; });
        if (it == tensors.end()) throw FormatError("checkpoint lacks tensor '" + p.name + "'");
        if (it->shape != p.tensor.shape()) {
            throw FormatError("checkpoint tensor '" + p.name + "' has shape " + ad::shape_string(it->shape) +
                              ", model expects " + ad::shape_string(p.tensor.shape()));
        }
        std::copy(it->values.begin(), it->values.end(), p.tensor.mutable_data().begin());
    }
}

}  // namespace latentlm
