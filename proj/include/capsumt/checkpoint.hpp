#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsumt/binio.hpp"
#include "capsumt/common.hpp"
#include "capsumt/tape.hpp"
#include "capsumt/tensor.hpp"

namespace capsumt {

// CKPT model checkpoint, little-endian:
//   magic "CKPT", u32 version=1, u64 rng seed, u32 epoch,
//   u32 kind length + bytes, u32 config-JSON length + bytes,
//   u32 tensor count, then per tensor:
//     u32 name length + bytes, u32 rank, u32 dims[rank], float32 data[numel].
// Tensor payloads are float32, so a float-precision model round-trips
// bit-exactly; wider precisions quantize on save.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    struct NamedTensor {
        std::string name;
        Shape shape;
        std::vector<float> data;
    };

    std::string kind;
    std::string config_json;
    std::uint64_t seed = 0;
    std::uint32_t epoch = 0;
    std::vector<NamedTensor> tensors;

    template <class T>
    static Checkpoint from_params(std::string kind, std::string config_json, std::uint64_t seed,
                                  std::uint32_t epoch, const ParameterSet<T>& params) {
        Checkpoint ck;
        ck.kind = std::move(kind);
        ck.config_json = std::move(config_json);
        ck.seed = seed;
        ck.epoch = epoch;
        for (const auto& p : params) {
            NamedTensor nt;
            nt.name = p.name;
            nt.shape = p.value.shape();
            nt.data.reserve(p.value.size());
            for (std::size_t i = 0; i < p.value.size(); ++i)
                nt.data.push_back(static_cast<float>(p.value[i]));
            ck.tensors.push_back(std::move(nt));
        }
        return ck;
    }

    template <class T>
    void load_into(ParameterSet<T>& params) const {
        if (tensors.size() != params.size())
            throw IoError("checkpoint: expected " + std::to_string(params.size()) +
                          " tensors, found " + std::to_string(tensors.size()));
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            auto& p = params[static_cast<int>(i)];
            const NamedTensor& nt = tensors[i];
            if (nt.name != p.name)
                throw IoError("checkpoint: tensor '" + nt.name + "' where '" + p.name +
                              "' was expected");
            if (nt.shape != p.value.shape())
                throw IoError("checkpoint: tensor '" + nt.name + "' has shape " +
                              shape_str(nt.shape) + ", model wants " + shape_str(p.value.shape()));
            for (std::size_t j = 0; j < nt.data.size(); ++j)
                p.value[j] = static_cast<T>(nt.data[j]);
        }
    }

    std::string encode() const {
        std::string out = "CKPT";
        binio::put_u32(out, kVersion);
        binio::put_u64(out, seed);
        binio::put_u32(out, epoch);
        binio::put_u32(out, static_cast<std::uint32_t>(kind.size()));
        out += kind;
        binio::put_u32(out, static_cast<std::uint32_t>(config_json.size()));
        out += config_json;
        binio::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
        for (const auto& nt : tensors) {
            binio::put_u32(out, static_cast<std::uint32_t>(nt.name.size()));
            out += nt.name;
            binio::put_u32(out, static_cast<std::uint32_t>(nt.shape.size()));
            for (std::size_t d : nt.shape) binio::put_u32(out, static_cast<std::uint32_t>(d));
            for (float f : nt.data) binio::put_f32(out, f);
        }
        return out;
    }

    static Checkpoint decode(const std::string& bytes, const std::string& source,
                             const std::string& expect_kind = "") {
        binio::Reader r(bytes, source);
        if (r.bytes(4) != "CKPT") throw IoError(source + ": bad magic, expected CKPT");
        std::uint32_t version = r.u32();
        if (version != kVersion)
            throw IoError(source + ": unsupported CKPT version " + std::to_string(version));
        Checkpoint ck;
        ck.seed = r.u64();
        ck.epoch = r.u32();
        ck.kind = r.bytes(r.u32());
        ck.config_json = r.bytes(r.u32());
        std::uint32_t count = r.u32();
        for (std::uint32_t t = 0; t < count; ++t) {
            NamedTensor nt;
            nt.name = r.bytes(r.u32());
            std::uint32_t rank = r.u32();
            std::size_t numel = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                nt.shape.push_back(r.u32());
                numel *= nt.shape.back();
            }
            nt.data.reserve(numel);
            for (std::size_t i = 0; i < numel; ++i) nt.data.push_back(r.f32());
            ck.tensors.push_back(std::move(nt));
        }
        if (!r.at_end())
            throw IoError(source + ": " + std::to_string(r.remaining()) +
                          " trailing bytes after checkpoint payload");
        if (!expect_kind.empty() && ck.kind != expect_kind)
            throw IoError(source + ": model kind '" + ck.kind + "' does not match expected '" +
                          expect_kind + "'");
        return ck;
    }

    void write(const std::string& path) const { binio::write_file(path, encode()); }

    static Checkpoint read(const std::string& path, const std::string& expect_kind = "") {
        return decode(binio::read_file(path), path, expect_kind);
    }
};

}  // namespace capsumt
