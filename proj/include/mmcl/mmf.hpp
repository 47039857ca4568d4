#pragma once

// MMF matrix file format:
//   magic "MMF1" | u32 rows | u32 cols | u8 dtype (1 = f32, 2 = f64) | payload
// Integers and floats are little-endian; the payload is row-major.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmcl/tensor.hpp"

namespace mmcl {

enum class MmfErrorCode { BadMagic, Truncated, DimOverflow, BadDtype, IoFailure };

class MmfError : public std::runtime_error {
public:
    MmfError(MmfErrorCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    MmfErrorCode code() const { return code_; }

private:
    MmfErrorCode code_;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace detail

// rows*cols capped so the payload size cannot overflow on 32-bit arithmetic
inline constexpr std::uint64_t kMmfMaxElements = 1ull << 28;

inline std::string encode_matrix(const Tensor& m, bool as_f32 = false) {
    if (m.rank() != 2)
        throw MmfError(MmfErrorCode::DimOverflow,
                       "mmf: only rank-2 tensors are encodable, got " +
                           shape_str(m.shape()));
    const std::uint64_t rows = m.rows(), cols = m.cols();
    if (rows > UINT32_MAX || cols > UINT32_MAX || rows * cols > kMmfMaxElements)
        throw MmfError(MmfErrorCode::DimOverflow, "mmf: dimensions too large");
    std::string out;
    out.reserve(13 + m.size() * (as_f32 ? 4 : 8));
    out += "MMF1";
    detail::put_u32_le(out, static_cast<std::uint32_t>(rows));
    detail::put_u32_le(out, static_cast<std::uint32_t>(cols));
    out.push_back(as_f32 ? 1 : 2);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double v = m[i];
        if (as_f32) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            detail::put_u32_le(out, bits);
        } else {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            detail::put_u64_le(out, bits);
        }
    }
    return out;
}

inline Tensor decode_matrix(const std::string& bytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 || std::memcmp(p, "MMF1", 4) != 0)
        throw MmfError(MmfErrorCode::BadMagic, "mmf: bad magic");
    if (bytes.size() < 13) throw MmfError(MmfErrorCode::Truncated, "mmf: truncated header");
    const std::uint64_t rows = detail::get_u32_le(p + 4);
    const std::uint64_t cols = detail::get_u32_le(p + 8);
    const unsigned char dtype = p[12];
    if (dtype != 1 && dtype != 2)
        throw MmfError(MmfErrorCode::BadDtype,
                       "mmf: unknown dtype tag " + std::to_string(dtype));
    if (rows * cols > kMmfMaxElements)
        throw MmfError(MmfErrorCode::DimOverflow, "mmf: dimensions too large");
    const std::size_t elem = dtype == 1 ? 4 : 8;
    const std::uint64_t need = 13 + rows * cols * elem;
    if (bytes.size() != need)
        throw MmfError(MmfErrorCode::Truncated,
                       "mmf: expected " + std::to_string(need) + " bytes, have " +
                           std::to_string(bytes.size()));
    Tensor out(Shape{static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
    const unsigned char* q = p + 13;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (dtype == 1) {
            const std::uint32_t bits = detail::get_u32_le(q);
            float f;
            std::memcpy(&f, &bits, 4);
            out[i] = static_cast<double>(f);
            q += 4;
        } else {
            const std::uint64_t bits = detail::get_u64_le(q);
            double d;
            std::memcpy(&d, &bits, 8);
            out[i] = d;
            q += 8;
        }
    }
    return out;
}

inline void write_matrix(const std::string& path, const Tensor& m, bool as_f32 = false) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw MmfError(MmfErrorCode::IoFailure, "mmf: cannot open " + path);
    const std::string bytes = encode_matrix(m, as_f32);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw MmfError(MmfErrorCode::IoFailure, "mmf: write failed for " + path);
}

inline Tensor read_matrix(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MmfError(MmfErrorCode::IoFailure, "mmf: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_matrix(bytes);
}

}  // namespace mmcl
