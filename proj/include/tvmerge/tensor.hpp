#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tvmerge {

enum class Dtype { F32, F16 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 2; }

inline const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "F32" : "F16"; }

inline Dtype dtype_from_name(const std::string& s) {
    if (s == "F32") return Dtype::F32;
    if (s == "F16") return Dtype::F16;
    throw std::runtime_error("unknown dtype: " + s);
}

// Working precision is double throughout; F32/F16 are storage dtypes only.
struct Tensor {
    Dtype dtype = Dtype::F32;
    std::vector<std::size_t> shape;
    std::vector<double> values;

    std::size_t numel() const {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                               std::multiplies<>());
    }
};

// Ordered name -> tensor collection (std::map gives the ascending-name
// iteration order the serialization contract requires).
struct TensorMap {
    std::map<std::string, Tensor> entries;
    std::map<std::string, std::string> metadata;
    std::string provenance;
};

// IEEE 754 binary16 <-> double.
inline double f16_to_double(std::uint16_t h) {
    const std::uint32_t sign = (h >> 15) & 1u;
    const std::uint32_t exp = (h >> 10) & 0x1fu;
    const std::uint32_t mant = h & 0x3ffu;
    std::uint32_t f;
    if (exp == 0) {
        if (mant == 0) {
            f = sign << 31;
        } else {
            // subnormal: renormalize
            std::uint32_t e = 0;
            std::uint32_t m = mant;
            while (!(m & 0x400u)) {
                m <<= 1;
                ++e;
            }
            m &= 0x3ffu;
            f = (sign << 31) | ((127 - 15 - e + 1) << 23) | (m << 13);
        }
    } else if (exp == 0x1f) {
        f = (sign << 31) | (0xffu << 23) | (mant << 13);
    } else {
        f = (sign << 31) | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float out;
    std::memcpy(&out, &f, 4);
    return static_cast<double>(out);
}

inline std::uint16_t double_to_f16(double x) {
    const float xf = static_cast<float>(x);
    std::uint32_t f;
    std::memcpy(&f, &xf, 4);
    const std::uint32_t sign = (f >> 16) & 0x8000u;
    const std::int32_t exp = static_cast<std::int32_t>((f >> 23) & 0xffu) - 127 + 15;
    std::uint32_t mant = f & 0x7fffffu;
    if (((f >> 23) & 0xffu) == 0xffu) {
        return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
    }
    if (exp >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u);  // overflow -> inf
    if (exp <= 0) {
        if (exp < -10) return static_cast<std::uint16_t>(sign);
        // subnormal: shift mantissa with round-to-nearest-even
        mant |= 0x800000u;
        const std::uint32_t shift = static_cast<std::uint32_t>(14 - exp);
        std::uint32_t half = mant >> shift;
        const std::uint32_t rem = mant & ((1u << shift) - 1);
        const std::uint32_t mid = 1u << (shift - 1);
        if (rem > mid || (rem == mid && (half & 1u))) ++half;
        return static_cast<std::uint16_t>(sign | half);
    }
    std::uint32_t half = static_cast<std::uint32_t>(exp << 10) | (mant >> 13);
    const std::uint32_t rem = mant & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;  // may carry into exp
    return static_cast<std::uint16_t>(sign | half);
}

namespace detail {
struct Fnv1a {
    std::uint64_t h = 0xcbf29ce484222325ull;
    void mix(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ull;
        }
    }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return std::string(buf);
    }
};
}  // namespace detail

// Hash of the checkpoint index, "<structural>.<dtype>": the structural part
// covers (name, shape), the second part the storage dtypes. Task vectors
// compare structural parts only, so F32 deltas still bind to an F16 base.
inline std::string index_fingerprint(const TensorMap& m) {
    detail::Fnv1a structural, dtypes;
    for (const auto& [name, t] : m.entries) {
        structural.mix(name.data(), name.size());
        structural.mix("|", 1);
        for (std::size_t d : t.shape) {
            std::uint64_t v = d;
            structural.mix(&v, 8);
        }
        structural.mix(";", 1);
        const char* dn = dtype_name(t.dtype);
        dtypes.mix(dn, std::strlen(dn));
    }
    return structural.hex() + "." + dtypes.hex();
}

inline std::string structural_part(const std::string& fingerprint) {
    return fingerprint.substr(0, fingerprint.find('.'));
}

}  // namespace tvmerge
