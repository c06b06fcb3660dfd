#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "pseg/tensor.hpp"

namespace pseg::fen {

/// Binary tensor table: magic "PSEG", version, iteration counter, then one
/// (name, rank, dims, f64 payload) record per tensor. Little-endian, bit-exact
/// round trip.
struct Checkpoint {
    std::uint64_t iteration = 0;
    std::map<std::string, Tensor> tensors;
};

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated checkpoint");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write("PSEG", 4);
    detail::write_pod<std::uint32_t>(out, 1);
    detail::write_pod<std::uint64_t>(out, ckpt.iteration);
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (Index d : t.shape) detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "PSEG", 4) != 0)
        throw IoError("not a checkpoint file: " + path.string());
    const auto version = detail::read_pod<std::uint32_t>(in);
    if (version != 1) throw IoError("unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.iteration = detail::read_pod<std::uint64_t>(in);
    const auto count = detail::read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = detail::read_pod<std::uint32_t>(in);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<Index>(detail::read_pod<std::uint64_t>(in));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!in) throw IoError("truncated checkpoint: " + path.string());
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace pseg::fen
