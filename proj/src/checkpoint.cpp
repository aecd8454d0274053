#include "vmnf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "vmnf/error.hpp"

namespace vmnf {

namespace {

constexpr char kMagic[4] = {'V', 'M', 'N', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw FormatError("truncated checkpoint");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string out = buf.substr(pos, n);
        pos += n;
        return out;
    }
};

void append_tensor(Checkpoint& ckpt, const std::string& name, const Tensor& t) {
    for (const auto& [existing, unused] : ckpt.tensors)
        if (existing == name) throw ContractError("duplicate tensor name " + name);
    ckpt.tensors.emplace_back(name, t);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, ckpt.config_text.size());
    out += ckpt.config_text;
    put_u64(out, ckpt.epoch);
    put_u64(out, ckpt.rng_state.size());
    out += ckpt.rng_state;
    put_u64(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        put_u64(out, name.size());
        out += name;
        put_u32(out, static_cast<std::uint32_t>(t.ndim()));
        for (std::size_t d : t.shape()) put_u64(out, d);
        for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t.data()[i]);
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};
    if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError("not a checkpoint file");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config_text = r.bytes(r.u64());
    ckpt.epoch = r.u64();
    ckpt.rng_state = r.bytes(r.u64());
    const std::uint64_t n_tensors = r.u64();
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        std::string name = r.bytes(r.u64());
        const std::uint32_t ndim = r.u32();
        if (ndim > 2) throw FormatError("tensor " + name + " has unsupported rank");
        Shape shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(r.u64());
        Tensor t(shape);
        for (std::size_t j = 0; j < t.size(); ++j) t.data()[j] = r.f64();
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (r.pos != buf.size()) throw FormatError("trailing bytes in checkpoint");
    return ckpt;
}

Checkpoint snapshot_model(MixtureModel& model, const std::string& config_text,
                          std::uint64_t epoch, const Rng& rng) {
    Checkpoint ckpt;
    ckpt.config_text = config_text;
    ckpt.epoch = epoch;
    ckpt.rng_state = rng.serialize();
    ParamList params;
    model.collect_params(params);
    for (const auto& p : params) append_tensor(ckpt, p.name, p.node->value);
    StateList state;
    model.collect_state(state);
    for (const auto& [name, tensor] : state) append_tensor(ckpt, name, *tensor);
    return ckpt;
}

void restore_model(MixtureModel& model, const Checkpoint& ckpt) {
    std::map<std::string, Tensor*> slots;
    ParamList params;
    model.collect_params(params);
    for (const auto& p : params) slots[p.name] = &p.node->value;
    StateList state;
    model.collect_state(state);
    for (const auto& [name, tensor] : state) slots[name] = tensor;

    std::map<std::string, bool> filled;
    for (const auto& [name, unused] : slots) filled[name] = false;
    for (const auto& [name, tensor] : ckpt.tensors) {
        auto it = slots.find(name);
        if (it == slots.end())
            throw FormatError("checkpoint tensor " + name + " has no slot in the model");
        if (!it->second->same_shape(tensor))
            throw FormatError("checkpoint tensor " + name + " has the wrong shape");
        *it->second = tensor;
        filled[name] = true;
    }
    for (const auto& [name, ok] : filled)
        if (!ok) throw FormatError("checkpoint is missing tensor " + name);
}

}  // namespace vmnf
