#pragma once

// Binary checkpoint container.
//
//   "GZMO"                       4 bytes magic
//   version                      u32 little-endian
//   config length, config JSON   u64 LE + UTF-8 bytes
//   blocks until end of file:
//     name length, name          u64 LE + UTF-8 bytes
//     rows, cols                 u64 LE each
//     values                     rows*cols IEEE-754 binary64, little-endian, row-major

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "numerics.hpp"

namespace gzsl {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'G', 'Z', 'M', 'O'};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_json;
    std::vector<std::pair<std::string, Matrix>> blocks;

    void add(std::string name, Matrix m) {
        for (const auto& b : blocks) require(b.first != name, "checkpoint: duplicate block '" + name + "'");
        blocks.emplace_back(std::move(name), std::move(m));
    }

    [[nodiscard]] const Matrix& block(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.first == name) return b.second;
        throw Error(ErrorKind::format, "checkpoint: missing block '" + name + "'");
    }
    [[nodiscard]] bool has(const std::string& name) const {
        for (const auto& b : blocks)
            if (b.first == name) return true;
        return false;
    }

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_str(std::string& out, const std::string& s) {
    put_u64(out, s.size());
    out += s;
}

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

    [[nodiscard]] bool at_end() const noexcept { return pos_ == bytes_.size(); }

    std::uint64_t u(int width) {
        require(bytes_.size() - pos_ >= static_cast<std::size_t>(width), "checkpoint: truncated file",
                ErrorKind::format);
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::string str() {
        const std::uint64_t n = u(8);
        require(bytes_.size() - pos_ >= n, "checkpoint: truncated file", ErrorKind::format);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n) {
        require(bytes_.size() - pos_ >= n, "checkpoint: truncated file", ErrorKind::format);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    std::string out(kCheckpointMagic, 4);
    detail::put_u32(out, ck.version);
    detail::put_str(out, ck.config_json);
    for (const auto& [name, m] : ck.blocks) {
        detail::put_str(out, name);
        detail::put_u64(out, m.rows());
        detail::put_u64(out, m.cols());
        for (double v : m.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
    detail::ByteReader in(bytes);
    require(in.raw(4) == std::string(kCheckpointMagic, 4), "checkpoint: bad magic", ErrorKind::format);
    Checkpoint ck;
    ck.version = static_cast<std::uint32_t>(in.u(4));
    require(ck.version == kCheckpointVersion,
            "checkpoint version mismatch: file has " + std::to_string(ck.version) + ", expected " +
                std::to_string(kCheckpointVersion),
            ErrorKind::format);
    ck.config_json = in.str();
    while (!in.at_end()) {
        std::string name = in.str();
        const std::uint64_t rows = in.u(8), cols = in.u(8);
        require(cols == 0 || rows <= (bytes.size() / 8) / cols, "checkpoint: block '" + name + "' is too large",
                ErrorKind::format);
        std::vector<double> v(rows * cols);
        for (double& x : v) x = std::bit_cast<double>(in.u(8));
        ck.add(std::move(name), Matrix(rows, cols, std::move(v)));
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), "cannot write checkpoint " + path.string(), ErrorKind::io);
    const std::string bytes = encode_checkpoint(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), "failed writing checkpoint " + path.string(), ErrorKind::io);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open checkpoint " + path.string(), ErrorKind::io);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Adds every parameter of `params` as a block named `<prefix><path>`.
template <class Params>
void add_param_blocks(Checkpoint& ck, const Params& params, const std::string& prefix) {
    Params::for_each_param(params, prefix, [&](const std::string& id, const Matrix& m) { ck.add(id, m); });
}

/// Overwrites every parameter of `params` from blocks; shapes must match.
template <class Params>
void read_param_blocks(const Checkpoint& ck, Params& params, const std::string& prefix) {
    Params::for_each_param(params, prefix, [&](const std::string& id, Matrix& m) {
        const Matrix& b = ck.block(id);
        require(b.same_shape(m), "checkpoint: block '" + id + "' has shape " + std::to_string(b.rows()) + "x" +
                                     std::to_string(b.cols()) + ", expected " + std::to_string(m.rows()) + "x" +
                                     std::to_string(m.cols()),
                ErrorKind::format);
        m = b;
    });
}

}  // namespace gzsl
