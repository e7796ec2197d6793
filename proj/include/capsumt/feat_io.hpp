#pragma once

#include <cmath>
#include <string>

#include "capsumt/binio.hpp"
#include "capsumt/common.hpp"
#include "capsumt/tensor.hpp"

namespace capsumt {

// FEAT image-feature file: magic "FEAT", u32 version=1, u32 k (regions),
// u32 D (feature width), then k*D float32 row-major values, little-endian.
// One file per image; values arrive pre-concatenated from the upstream
// encoders.

inline constexpr std::uint32_t kFeatVersion = 1;

template <class T>
Tensor<T> decode_features(const std::string& bytes, const std::string& source) {
    binio::Reader r(bytes, source);
    if (r.bytes(4) != "FEAT") throw IoError(source + ": bad magic, expected FEAT");
    std::uint32_t version = r.u32();
    if (version != kFeatVersion)
        throw IoError(source + ": unsupported FEAT version " + std::to_string(version));
    std::uint32_t k = r.u32();
    std::uint32_t d = r.u32();
    if (k == 0 || d == 0) throw IoError(source + ": FEAT dimensions must be positive");
    std::size_t expect = std::size_t{16} + std::size_t{4} * k * d;
    if (r.remaining() != std::size_t{4} * k * d)
        throw IoError(source + ": payload size mismatch, expected " + std::to_string(expect) +
                      " bytes total but got " + std::to_string(16 + r.remaining()));
    Tensor<T> f(Shape{k, d});
    for (std::size_t i = 0; i < f.size(); ++i) {
        float v = r.f32();
        if (!std::isfinite(v)) throw NumericError(source + ": non-finite feature value at index " +
                                                  std::to_string(i));
        f[i] = static_cast<T>(v);
    }
    return f;
}

template <class T>
Tensor<T> read_features(const std::string& path) {
    return decode_features<T>(binio::read_file(path), path);
}

template <class T>
std::string encode_features(const Tensor<T>& f) {
    if (f.rank() != 2) throw ShapeError("encode_features: need a k x D matrix");
    std::string out = "FEAT";
    binio::put_u32(out, kFeatVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(f.dim(0)));
    binio::put_u32(out, static_cast<std::uint32_t>(f.dim(1)));
    for (std::size_t i = 0; i < f.size(); ++i) binio::put_f32(out, static_cast<float>(f[i]));
    return out;
}

template <class T>
void write_features(const std::string& path, const Tensor<T>& f) {
    binio::write_file(path, encode_features(f));
}

}  // namespace capsumt
