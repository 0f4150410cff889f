#include "foresee/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "foresee/dataset.hpp"
#include "foresee/hash.hpp"

namespace fse {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'E', '1'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
public:
    Reader(const std::string& buf, std::size_t limit) : buf_(buf), limit_(limit) {}

    std::size_t pos() const { return pos_; }

    const char* take(std::size_t n) {
        if (pos_ + n > limit_) throw CheckpointCorruptError("checkpoint truncated");
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint32_t get_u32() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

    std::uint64_t get_u64() {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(take(8));
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }

    std::string get_string(std::size_t n) { return std::string(take(n), n); }

private:
    const std::string& buf_;
    std::size_t limit_;
    std::size_t pos_ = 0;
};

enum : std::uint8_t { kDtypeF64 = 0, kDtypeF32 = 1 };

} // namespace

const Array& Checkpoint::find(const std::string& name) const {
    for (const auto& [n, a] : arrays)
        if (n == name) return a;
    throw ContractError("checkpoint has no array named '" + name + "'");
}

void save_checkpoint(const std::string& path, const CheckpointManifest& manifest,
                     const std::vector<std::pair<std::string, const Array*>>& arrays, bool as_f32) {
    nlohmann::json mj;
    mj["config"] = manifest.config;
    mj["config_hash"] = fnv1a64_hex(manifest.config.dump());
    mj["metrics"] = manifest.metrics.is_null() ? nlohmann::json::object() : manifest.metrics;
    mj["model_kind"] = manifest.model_kind;
    mj["stage"] = manifest.stage;
    const std::string manifest_text = mj.dump();

    std::string data;
    std::string directory;
    std::uint64_t offset = 0;
    for (const auto& [name, array] : arrays) {
        put_u32(directory, static_cast<std::uint32_t>(name.size()));
        directory += name;
        directory.push_back(static_cast<char>(as_f32 ? kDtypeF32 : kDtypeF64));
        put_u32(directory, static_cast<std::uint32_t>(array->shape().size()));
        for (const int dim : array->shape()) put_u64(directory, static_cast<std::uint64_t>(dim));
        put_u64(directory, offset);
        const std::uint64_t bytes =
            static_cast<std::uint64_t>(array->size()) * (as_f32 ? 4 : 8);
        put_u64(directory, bytes);
        offset += bytes;
        if (as_f32) {
            for (std::size_t i = 0; i < array->size(); ++i)
                put_f32(data, static_cast<float>(array->data()[i]));
        } else {
            for (std::size_t i = 0; i < array->size(); ++i) put_f64(data, array->data()[i]);
        }
    }

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u64(out, manifest_text.size());
    out += manifest_text;
    put_u64(out, arrays.size());
    out += directory;
    put_u64(out, data.size());
    out += data;
    put_u64(out, fnv1a64(out));
    atomic_write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    if (buf.size() < 16 || buf.compare(0, 4, kMagic, 4) != 0)
        throw CheckpointCorruptError("not a checkpoint file: '" + path + "'");
    const std::uint64_t stored_hash = Reader(buf.substr(buf.size() - 8), 8).get_u64();
    if (fnv1a64(buf.substr(0, buf.size() - 8)) != stored_hash)
        throw CheckpointCorruptError("checkpoint content hash mismatch: '" + path + "'");

    Reader reader(buf, buf.size() - 8);
    reader.take(4); // magic
    const std::uint32_t version = reader.get_u32();
    if (version != kFormatVersion)
        throw CheckpointVersionError("checkpoint format version " + std::to_string(version) +
                                     ", expected " + std::to_string(kFormatVersion));

    Checkpoint ckpt;
    const std::uint64_t manifest_len = reader.get_u64();
    nlohmann::json mj;
    try {
        mj = nlohmann::json::parse(reader.get_string(manifest_len));
    } catch (const nlohmann::json::exception&) {
        throw CheckpointCorruptError("checkpoint manifest is not valid JSON");
    }
    if (!mj.contains("model_kind") || !mj["model_kind"].is_string())
        throw CheckpointCorruptError("checkpoint manifest lacks model_kind");
    ckpt.manifest.model_kind = mj["model_kind"].get<std::string>();
    ckpt.manifest.config = mj.value("config", nlohmann::json::object());
    ckpt.manifest.config_hash = mj.value("config_hash", std::string());
    ckpt.manifest.stage = mj.value("stage", 0);
    ckpt.manifest.metrics = mj.value("metrics", nlohmann::json::object());
    if (ckpt.manifest.config_hash != fnv1a64_hex(ckpt.manifest.config.dump()))
        throw CheckpointCorruptError("checkpoint config does not match its stored hash");

    struct Entry {
        std::string name;
        std::uint8_t dtype;
        std::vector<int> shape;
        std::uint64_t offset;
        std::uint64_t bytes;
        std::size_t count;
    };
    const std::uint64_t array_count = reader.get_u64();
    std::vector<Entry> entries;
    entries.reserve(array_count);
    for (std::uint64_t k = 0; k < array_count; ++k) {
        Entry e;
        const std::uint32_t name_len = reader.get_u32();
        e.name = reader.get_string(name_len);
        e.dtype = static_cast<std::uint8_t>(*reader.take(1));
        if (e.dtype != kDtypeF64 && e.dtype != kDtypeF32)
            throw CheckpointCorruptError("unknown dtype for array '" + e.name + "'");
        const std::uint32_t ndim = reader.get_u32();
        e.count = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            const std::uint64_t dim = reader.get_u64();
            if (dim == 0 || dim > (1ULL << 31))
                throw CheckpointCorruptError("bad dimension for array '" + e.name + "'");
            e.shape.push_back(static_cast<int>(dim));
            e.count *= static_cast<std::size_t>(dim);
        }
        e.offset = reader.get_u64();
        e.bytes = reader.get_u64();
        const std::uint64_t elem = e.dtype == kDtypeF64 ? 8 : 4;
        if (e.bytes != e.count * elem)
            throw CheckpointCorruptError("directory size mismatch for array '" + e.name + "'");
        entries.push_back(std::move(e));
    }
    const std::uint64_t data_len = reader.get_u64();
    const char* data = reader.take(data_len);

    for (const auto& e : entries) {
        if (e.offset + e.bytes > data_len)
            throw CheckpointCorruptError("payload overrun for array '" + e.name + "'");
        Array a = Array::zeros(e.shape);
        const unsigned char* p = reinterpret_cast<const unsigned char*>(data + e.offset);
        for (std::size_t i = 0; i < e.count; ++i) {
            if (e.dtype == kDtypeF64) {
                std::uint64_t bits = 0;
                for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[i * 8 + static_cast<std::size_t>(b)];
                a.data()[i] = std::bit_cast<double>(bits);
            } else {
                std::uint32_t bits = 0;
                for (int b = 3; b >= 0; --b) bits = (bits << 8) | p[i * 4 + static_cast<std::size_t>(b)];
                a.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
            }
        }
        ckpt.arrays.emplace_back(e.name, std::move(a));
    }
    return ckpt;
}

void require_kind(const Checkpoint& ckpt, const std::string& kind) {
    if (ckpt.manifest.model_kind != kind)
        throw CheckpointKindError("checkpoint holds a '" + ckpt.manifest.model_kind +
                                  "' model, expected '" + kind + "'");
}

void require_config(const Checkpoint& ckpt, const nlohmann::json& expected_config) {
    if (ckpt.manifest.config_hash != fnv1a64_hex(expected_config.dump()))
        throw CheckpointHashError("checkpoint config hash does not match the requested config");
}

void assign_arrays(const Checkpoint& ckpt,
                   const std::vector<std::pair<std::string, Array*>>& named) {
    for (const auto& [name, dest] : named) {
        const Array* found = nullptr;
        for (const auto& [n, a] : ckpt.arrays)
            if (n == name) {
                found = &a;
                break;
            }
        if (found == nullptr)
            throw CheckpointCorruptError("checkpoint lacks array '" + name + "'");
        if (found->shape() != dest->shape())
            throw CheckpointCorruptError("checkpoint array '" + name + "' has shape " +
                                         found->shape_string() + ", expected " + dest->shape_string());
        *dest = *found;
    }
}

} // namespace fse
