#pragma once

// Named-tensor archive.
//
// Layout (all integers 32-bit little-endian unsigned):
//   "SGCK" | format_version | entry_count |
//   entry_count x ( path_len | path bytes (UTF-8) | rank | extents[rank] |
//                   values: float32 little-endian IEEE-754, row-major )

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "segnet/error.hpp"
#include "segnet/tensor.hpp"

namespace segnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'G', 'C', 'K'};

struct CheckpointEntry {
    Shape shape;
    std::vector<float> values;
};

class Checkpoint {
public:
    using Entries = std::map<std::string, CheckpointEntry>;

    void put(const std::string& path, Shape shape, std::vector<float> values) {
        if (numel(shape) != values.size()) throw ShapeError("checkpoint entry " + path + ": value count mismatch");
        entries_[path] = {std::move(shape), std::move(values)};
    }

    template <typename T>
    void put(const std::string& path, const Tensor<T>& t) {
        put(path, t.shape(), std::vector<float>(t.data().begin(), t.data().end()));
    }

    bool contains(const std::string& path) const { return entries_.count(path) != 0; }
    const CheckpointEntry& at(const std::string& path) const {
        auto it = entries_.find(path);
        if (it == entries_.end()) throw ValueError("checkpoint has no entry " + path);
        return it->second;
    }
    void erase(const std::string& path) { entries_.erase(path); }
    const Entries& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::uint32_t format_version() const { return version_; }

    void save(const std::string& file) const {
        std::ofstream os(file, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open checkpoint for writing: " + file);
        os.write(kCheckpointMagic, 4);
        write_u32(os, kCheckpointVersion);
        write_u32(os, static_cast<std::uint32_t>(entries_.size()));
        for (const auto& [path, e] : entries_) {
            write_u32(os, static_cast<std::uint32_t>(path.size()));
            os.write(path.data(), static_cast<std::streamsize>(path.size()));
            write_u32(os, static_cast<std::uint32_t>(e.shape.size()));
            for (std::size_t d : e.shape) write_u32(os, static_cast<std::uint32_t>(d));
            for (float v : e.values) write_u32(os, std::bit_cast<std::uint32_t>(v));
        }
        if (!os) throw IoError("failed writing checkpoint: " + file);
    }

    static Checkpoint load(const std::string& file) {
        std::ifstream is(file, std::ios::binary);
        if (!is) throw IoError("cannot open checkpoint: " + file);
        char magic[4];
        if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
            throw IoError("not a checkpoint file (bad magic): " + file);
        Checkpoint ck;
        ck.version_ = read_u32(is, file);
        if (ck.version_ != kCheckpointVersion)
            throw IoError("unsupported checkpoint version " + std::to_string(ck.version_) + " in " + file);
        const std::uint32_t count = read_u32(is, file);
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t len = read_u32(is, file);
            if (len > (1u << 16)) throw IoError("corrupt checkpoint (path length) in " + file);
            std::string path(len, '\0');
            if (!is.read(path.data(), len)) throw IoError("truncated checkpoint: " + file);
            const std::uint32_t rank = read_u32(is, file);
            if (rank == 0 || rank > kMaxRank) throw IoError("corrupt checkpoint (rank) at entry " + path);
            Shape shape(rank);
            for (auto& d : shape) {
                d = read_u32(is, file);
                if (d == 0) throw IoError("corrupt checkpoint (zero extent) at entry " + path);
            }
            const std::size_t n = numel(shape);
            if (n > (std::size_t{1} << 31)) throw IoError("corrupt checkpoint (size) at entry " + path);
            std::vector<float> values(n);
            for (auto& v : values) v = std::bit_cast<float>(read_u32(is, file));
            ck.entries_[path] = {std::move(shape), std::move(values)};
        }
        if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in checkpoint: " + file);
        return ck;
    }

private:
    static void write_u32(std::ostream& os, std::uint32_t v) {
        const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                    static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char*>(b), 4);
    }
    static std::uint32_t read_u32(std::istream& is, const std::string& file) {
        unsigned char b[4];
        if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated checkpoint: " + file);
        return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
               (std::uint32_t{b[3]} << 24);
    }

    Entries entries_;
    std::uint32_t version_ = kCheckpointVersion;
};

}  // namespace segnet
