#ifndef MASKFILL_ARCHIVE_HPP
#define MASKFILL_ARCHIVE_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace maskfill {

/// Element type of a stored array.
enum class DType : std::uint8_t { f32 = 0, f64 = 1, i64 = 2, u8 = 3 };

std::size_t dtype_size(DType type);

/// One named, typed, shaped array.
struct NamedArray {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;
    std::vector<std::byte> bytes;

    [[nodiscard]] std::int64_t numel() const;

    static NamedArray from_floats(std::string name, std::vector<std::int64_t> shape, std::span<const float> values);
    [[nodiscard]] std::vector<float> to_floats() const;
};

/// Named-array archive: the on-disk container for checkpoints, extractor
/// weights, preprocessed sample sets and embedding caches.
///
/// Layout (little-endian):
///   magic "MASKFILL" | u32 version | u32 meta_len | meta (JSON, UTF-8)
///   u64 entry_count | entries... | u32 crc32 of all preceding bytes
/// entry: u32 name_len | name | u8 dtype | u8 ndim | i64 dims[ndim] | u64 nbytes | data
///
/// Loading verifies magic, version, structure and checksum before returning
/// anything, so a corrupt file never yields a partial archive.
class Archive {
public:
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json metadata = nlohmann::json::object();

    void add(NamedArray array);
    [[nodiscard]] bool contains(const std::string& name) const;
    [[nodiscard]] const NamedArray& get(const std::string& name) const;
    [[nodiscard]] const std::vector<NamedArray>& entries() const { return entries_; }

    [[nodiscard]] std::vector<std::byte> serialize() const;
    static Archive deserialize(std::span<const std::byte> data);

    void save(const std::filesystem::path& path) const;
    static Archive load(const std::filesystem::path& path);

private:
    std::vector<NamedArray> entries_;
};

/// Thrown for malformed, truncated, corrupted or version-mismatched archives.
struct ArchiveError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace maskfill

#endif  // MASKFILL_ARCHIVE_HPP
