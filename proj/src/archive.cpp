#include "maskfill/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace maskfill {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'S', 'K', 'F', 'I', 'L', 'L'};

class Writer {
public:
    template <typename T>
    void put(T value) {
        const auto* p = reinterpret_cast<const std::byte*>(&value);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::byte*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    std::vector<std::byte>& buffer() { return buf_; }

private:
    std::vector<std::byte> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::byte> data) : data_(data) {}

    template <typename T>
    T get() {
        T value;
        std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
        return value;
    }
    std::span<const std::byte> take(std::size_t n) {
        if (n > data_.size() - pos_) throw ArchiveError("archive truncated");
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    [[nodiscard]] std::size_t position() const { return pos_; }

private:
    std::span<const std::byte> data_;
    std::size_t pos_ = 0;
};

std::uint32_t checksum(std::span<const std::byte> data) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for large archives.
    std::size_t off = 0;
    while (off < data.size()) {
        const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + off), n);
        off += n;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::size_t dtype_size(DType type) {
    switch (type) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::i64: return 8;
        case DType::u8: return 1;
    }
    throw ArchiveError("unknown dtype");
}

std::int64_t NamedArray::numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

NamedArray NamedArray::from_floats(std::string name, std::vector<std::int64_t> shape, std::span<const float> values) {
    NamedArray a;
    a.name = std::move(name);
    a.dtype = DType::f32;
    a.shape = std::move(shape);
    if (a.numel() != static_cast<std::int64_t>(values.size())) {
        throw std::invalid_argument("NamedArray: shape does not match value count for " + a.name);
    }
    a.bytes.resize(values.size_bytes());
    std::memcpy(a.bytes.data(), values.data(), values.size_bytes());
    return a;
}

std::vector<float> NamedArray::to_floats() const {
    if (dtype != DType::f32) throw ArchiveError("array " + name + " is not float32");
    std::vector<float> out(static_cast<std::size_t>(numel()));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

void Archive::add(NamedArray array) {
    if (contains(array.name)) throw std::invalid_argument("duplicate archive entry: " + array.name);
    if (array.bytes.size() != static_cast<std::size_t>(array.numel()) * dtype_size(array.dtype)) {
        throw std::invalid_argument("archive entry size mismatch: " + array.name);
    }
    entries_.push_back(std::move(array));
}

bool Archive::contains(const std::string& name) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

const NamedArray& Archive::get(const std::string& name) const {
    for (const auto& e : entries_)
        if (e.name == name) return e;
    throw ArchiveError("archive has no entry named " + name);
}

std::vector<std::byte> Archive::serialize() const {
    Writer w;
    w.put_bytes(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kVersion);
    const std::string meta = metadata.dump();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.put_bytes(meta.data(), meta.size());
    w.put<std::uint64_t>(entries_.size());
    for (const auto& e : entries_) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
        w.put_bytes(e.name.data(), e.name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(e.dtype));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
        for (auto d : e.shape) w.put<std::int64_t>(d);
        w.put<std::uint64_t>(e.bytes.size());
        w.put_bytes(e.bytes.data(), e.bytes.size());
    }
    auto& buf = w.buffer();
    const std::uint32_t crc = checksum(buf);
    w.put<std::uint32_t>(crc);
    return std::move(buf);
}

Archive Archive::deserialize(std::span<const std::byte> data) {
    if (data.size() < sizeof(kMagic) + 4 + 4) throw ArchiveError("archive truncated");
    const std::uint32_t stored_crc = [&] {
        std::uint32_t v;
        std::memcpy(&v, data.data() + data.size() - 4, 4);
        return v;
    }();
    const auto body = data.first(data.size() - 4);

    Reader r(body);
    if (std::memcmp(r.take(sizeof(kMagic)).data(), kMagic, sizeof(kMagic)) != 0) {
        throw ArchiveError("not a maskfill archive (bad magic)");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) {
        throw ArchiveError("unsupported archive version " + std::to_string(version) + " (expected " +
                           std::to_string(kVersion) + ")");
    }
    if (checksum(body) != stored_crc) throw ArchiveError("archive checksum mismatch (file corrupt)");

    Archive out;
    const auto meta_len = r.get<std::uint32_t>();
    const auto meta_bytes = r.take(meta_len);
    try {
        out.metadata = nlohmann::json::parse(reinterpret_cast<const char*>(meta_bytes.data()),
                                             reinterpret_cast<const char*>(meta_bytes.data()) + meta_len);
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(std::string("archive metadata is not valid JSON: ") + e.what());
    }
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedArray e;
        const auto name_len = r.get<std::uint32_t>();
        const auto name = r.take(name_len);
        e.name.assign(reinterpret_cast<const char*>(name.data()), name_len);
        const auto dtype = r.get<std::uint8_t>();
        if (dtype > static_cast<std::uint8_t>(DType::u8)) throw ArchiveError("bad dtype in entry " + e.name);
        e.dtype = static_cast<DType>(dtype);
        const auto ndim = r.get<std::uint8_t>();
        for (int d = 0; d < ndim; ++d) {
            const auto dim = r.get<std::int64_t>();
            if (dim < 0) throw ArchiveError("negative dimension in entry " + e.name);
            e.shape.push_back(dim);
        }
        const auto nbytes = r.get<std::uint64_t>();
        if (nbytes != static_cast<std::uint64_t>(e.numel()) * dtype_size(e.dtype)) {
            throw ArchiveError("entry size does not match shape: " + e.name);
        }
        const auto payload = r.take(nbytes);
        e.bytes.assign(payload.begin(), payload.end());
        out.add(std::move(e));
    }
    if (r.position() != body.size()) throw ArchiveError("trailing bytes in archive");
    return out;
}

void Archive::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write to a sibling temp file and rename so readers never see a half-written archive.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ArchiveError("cannot open for writing: " + tmp.string());
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw ArchiveError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArchiveError("cannot open archive: " + path.string());
    std::vector<std::byte> bytes;
    f.seekg(0, std::ios::end);
    bytes.resize(static_cast<std::size_t>(f.tellg()));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ArchiveError("cannot read archive: " + path.string());
    return deserialize(bytes);
}

}  // namespace maskfill
