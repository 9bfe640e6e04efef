#pragma once
// Versioned binary checkpoint:
//
//   magic "ORDCHGCK" (8 bytes)
//   u32 format version
//   u8  siamese flag
//   f64 dropout rate
//   u64 input width, u32 encoder layer count, u32 head layer count
//   per layer (encoder first, then head): u64 out, u64 in
//   per layer, same order: out*in weights (row-major) then out biases, f64
//   u32 CRC32 of every preceding byte
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "model.hpp"

namespace ordchange {

inline constexpr char kCheckpointMagic[8] = {'O', 'R', 'D', 'C', 'H', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    std::vector<unsigned char>& bytes() { return bytes_; }

private:
    std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
    ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > n_) throw CheckpointError("checkpoint is truncated");
        T v;
        std::memcpy(&v, p_ + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::size_t remaining() const { return n_ - pos_; }

private:
    const unsigned char* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
    return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

} // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const ModelParams& params) {
    params.validate();
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint8_t>(params.siamese ? 1 : 0);
    w.put<double>(params.dropout_rate);
    w.put<std::uint64_t>(params.input_features);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.encoder.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.head.size()));
    for (const auto* group : {&params.encoder, &params.head})
        for (const auto& l : *group) {
            w.put<std::uint64_t>(l.out);
            w.put<std::uint64_t>(l.in);
        }
    for (const auto* group : {&params.encoder, &params.head})
        for (const auto& l : *group) {
            for (double v : l.weight) w.put<double>(v);
            for (double v : l.bias) w.put<double>(v);
        }
    auto& bytes = w.bytes();
    w.put<std::uint32_t>(detail::crc32_of(bytes.data(), bytes.size()));
    return std::move(bytes);
}

inline ModelParams deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < sizeof(kCheckpointMagic) + 8) throw CheckpointError("checkpoint is truncated");
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw CheckpointError("not a checkpoint file (bad magic)");
    const std::size_t body = bytes.size() - sizeof(std::uint32_t);
    std::uint32_t stored;
    std::memcpy(&stored, bytes.data() + body, sizeof(stored));
    if (stored != detail::crc32_of(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch");

    detail::ByteReader r(bytes.data() + sizeof(kCheckpointMagic), body - sizeof(kCheckpointMagic));
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    ModelParams p;
    p.siamese = r.get<std::uint8_t>() != 0;
    p.dropout_rate = r.get<double>();
    p.input_features = r.get<std::uint64_t>();
    const auto n_enc = r.get<std::uint32_t>();
    const auto n_head = r.get<std::uint32_t>();
    if (static_cast<std::size_t>(n_enc + n_head) * 16 > r.remaining()) throw CheckpointError("checkpoint is truncated");
    auto read_shapes = [&](std::vector<DenseLayer>& layers, std::uint32_t n) {
        for (std::uint32_t i = 0; i < n; ++i) {
            const auto out = r.get<std::uint64_t>();
            const auto in = r.get<std::uint64_t>();
            if (out * in + out > r.remaining() / sizeof(double)) throw CheckpointError("checkpoint is truncated");
            layers.emplace_back(in, out);
        }
    };
    read_shapes(p.encoder, n_enc);
    read_shapes(p.head, n_head);
    for (auto* group : {&p.encoder, &p.head})
        for (auto& l : *group) {
            for (double& v : l.weight) v = r.get<double>();
            for (double& v : l.bias) v = r.get<double>();
        }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint");
    try {
        p.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("invalid checkpoint contents: ") + e.what());
    }
    return p;
}

inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(params);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

} // namespace ordchange
