#include "loraseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace loraseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

CheckpointEntry CheckpointEntry::tensor(std::string name, Shape shape, std::vector<float> values) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
        throw CheckpointError("entry " + name + ": value count does not match shape " + shape_str(shape));
    CheckpointEntry e;
    e.name = std::move(name);
    e.kind = Kind::f32;
    e.shape = std::move(shape);
    e.values = std::move(values);
    return e;
}

CheckpointEntry CheckpointEntry::note(std::string name, std::string text) {
    CheckpointEntry e;
    e.name = std::move(name);
    e.kind = Kind::text;
    e.shape = {static_cast<std::int64_t>(text.size())};
    e.text = std::move(text);
    return e;
}

namespace {

void put_u32(std::string &out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

class Reader {
public:
    explicit Reader(const std::string &bytes) : b_(bytes) {}

    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, take(4), 4);
        return v;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(*take(1)); }
    const char *take(std::size_t n) {
        if (n > b_.size() - pos_) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
        const char *p = b_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::string &b_;
    std::size_t pos_ = 0;
};

} // namespace

std::string encode_checkpoint(const std::vector<CheckpointEntry> &entries) {
    std::string out = "SL2L";
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    std::set<std::string> seen;
    for (const auto &e : entries) {
        if (!seen.insert(e.name).second) throw CheckpointError("duplicate checkpoint entry " + e.name);
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out += e.name;
        out.push_back(static_cast<char>(e.kind));
        put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (auto d : e.shape) put_u32(out, static_cast<std::uint32_t>(d));
        if (e.kind == CheckpointEntry::Kind::f32) {
            out.append(reinterpret_cast<const char *>(e.values.data()), e.values.size() * sizeof(float));
        } else {
            out += e.text;
        }
    }
    return out;
}

std::vector<CheckpointEntry> decode_checkpoint(const std::string &bytes) {
    Reader r(bytes);
    if (std::string(r.take(4), 4) != "SL2L") throw CheckpointError("not an SL2L checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<CheckpointEntry> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const std::uint32_t len = r.u32();
        e.name.assign(r.take(len), len);
        const std::uint8_t kind = r.u8();
        if (kind > 1) throw CheckpointError("entry " + e.name + ": unknown dtype tag " + std::to_string(kind));
        e.kind = static_cast<CheckpointEntry::Kind>(kind);
        const std::uint32_t rank = r.u32();
        for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u32());
        const auto n = static_cast<std::size_t>(shape_numel(e.shape));
        if (e.kind == CheckpointEntry::Kind::f32) {
            e.values.resize(n);
            std::memcpy(e.values.data(), r.take(n * sizeof(float)), n * sizeof(float));
        } else {
            if (rank != 1) throw CheckpointError("text entry " + e.name + " must have rank 1");
            e.text.assign(r.take(n), n);
        }
        out.push_back(std::move(e));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after last checkpoint entry");
    return out;
}

void write_checkpoint(const std::filesystem::path &path, const std::vector<CheckpointEntry> &entries) {
    const std::string bytes = encode_checkpoint(entries);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

} // namespace loraseg
