#include "charbench/params_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace charbench {

namespace {

constexpr char kMagic[4] = {'C', 'B', 'P', 'W'};
constexpr uint16_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const uint8_t* data, size_t size, const std::filesystem::path& path)
        : data_(data), size_(size), path_(path) {}

    uint16_t u16() { return static_cast<uint16_t>(u8() | (u8() << 8)); }

    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
        return v;
    }

    uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    std::string bytes(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    void floats(float* dst, size_t n) {
        need(n * sizeof(float));
        std::memcpy(dst, data_ + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }

    void skip_floats(size_t n) {
        need(n * sizeof(float));
        pos_ += n * sizeof(float);
    }

    size_t pos() const { return pos_; }

private:
    const uint8_t* data_;
    size_t size_;
    std::filesystem::path path_;
    size_t pos_ = 0;

    void need(size_t n) const {
        if (pos_ + n > size_) {
            throw IoError(cat("parameter file '", path_.string(), "' is truncated"));
        }
    }
};

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(cat("cannot open parameter file '", path.string(), "'"));
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

/// Checks magic, version and trailing CRC; returns a reader positioned at
/// the entry count.
Reader open_checked(const std::vector<uint8_t>& bytes, const std::filesystem::path& path) {
    if (bytes.size() < 4 + 2 + 4 + 4) {
        throw IoError(cat("parameter file '", path.string(), "' is truncated"));
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IoError(cat("parameter file '", path.string(), "' has a bad magic"));
    }
    const size_t body = bytes.size() - 4;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(bytes[body + i]) << (8 * i);
    const uint32_t computed =
        static_cast<uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(body)));
    if (stored != computed) {
        throw IoError(cat("parameter file '", path.string(), "' failed its checksum"));
    }
    Reader r(bytes.data(), body, path);
    r.bytes(4); // magic
    const uint16_t version = r.u16();
    if (version != kVersion) {
        throw IoError(cat("parameter file '", path.string(), "' has unsupported version ", version));
    }
    return r;
}

} // namespace

void save_params(const ParamStore& store, const std::filesystem::path& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    put_u32(out, static_cast<uint32_t>(store.size()));
    for (const auto& [name, e] : store.entries()) {
        if (name.size() > 0xffff) throw IoError(cat("parameter name too long: '", name, "'"));
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.append(name);
        out.push_back(static_cast<char>(kDtypeF32));
        const Shape& shape = e.tensor.shape();
        out.push_back(static_cast<char>(shape.size()));
        for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
        auto data = e.tensor.data();
        out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
    }
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
    put_u32(out, crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(cat("cannot write parameter file '", path.string(), "'"));
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError(cat("short write to parameter file '", path.string(), "'"));
}

void load_params(const std::filesystem::path& path, ParamStore& store) {
    const std::vector<uint8_t> bytes = read_file(path);
    Reader r = open_checked(bytes, path);
    const uint32_t count = r.u32();

    // parse fully before committing anything
    struct Pending {
        std::string name;
        Shape shape;
        std::vector<float> data;
    };
    std::vector<Pending> pending;
    pending.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Pending p;
        p.name = r.bytes(r.u16());
        const uint8_t dtype = r.u8();
        if (dtype != kDtypeF32) {
            throw IoError(cat("entry '", p.name, "' has unsupported dtype tag ", int(dtype)));
        }
        const uint8_t rank = r.u8();
        int64_t n = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            p.shape.push_back(static_cast<int>(r.u32()));
            n *= p.shape.back();
        }
        p.data.resize(static_cast<size_t>(n));
        r.floats(p.data.data(), p.data.size());
        pending.push_back(std::move(p));
    }

    for (const Pending& p : pending) {
        if (!store.contains(p.name)) {
            throw IoError(cat("parameter '", p.name, "' from '", path.string(),
                              "' does not exist in the target store"));
        }
        if (store.at(p.name).tensor.shape() != p.shape) {
            throw IoError(cat("parameter '", p.name, "' has shape ", shape_str(p.shape),
                              " in file but ", shape_str(store.at(p.name).tensor.shape()),
                              " in the target store"));
        }
    }
    if (pending.size() != store.size()) {
        for (const auto& [name, e] : store.entries()) {
            bool found = false;
            for (const Pending& p : pending) found = found || p.name == name;
            if (!found) {
                throw IoError(cat("parameter '", name, "' is missing from '", path.string(), "'"));
            }
        }
    }

    // commit: copy values in place so existing tensor handles stay bound
    for (const Pending& p : pending) {
        auto dst = store.at(p.name).tensor.data();
        std::copy(p.data.begin(), p.data.end(), dst.begin());
    }
}

std::vector<std::pair<std::string, Shape>> inspect_params(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = read_file(path);
    Reader r = open_checked(bytes, path);
    const uint32_t count = r.u32();
    std::vector<std::pair<std::string, Shape>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u16());
        const uint8_t dtype = r.u8();
        if (dtype != kDtypeF32) {
            throw IoError(cat("entry '", name, "' has unsupported dtype tag ", int(dtype)));
        }
        const uint8_t rank = r.u8();
        Shape shape;
        int64_t n = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int>(r.u32()));
            n *= shape.back();
        }
        r.skip_floats(static_cast<size_t>(n));
        out.emplace_back(std::move(name), std::move(shape));
    }
    return out;
}

} // namespace charbench
