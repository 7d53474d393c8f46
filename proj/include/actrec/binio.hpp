#pragma once

// Little-endian primitives for the binary model and feature formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "actrec/errors.hpp"

namespace actrec::binio {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, std::string_view what) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw DataError("truncated binary input while reading " + std::string(what));
    return value;
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_pod(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_pod(out, v); }
inline void write_f64(std::ostream& out, double v) { write_pod(out, v); }

inline std::uint32_t read_u32(std::istream& in, std::string_view what) {
    return read_pod<std::uint32_t>(in, what);
}
inline std::uint64_t read_u64(std::istream& in, std::string_view what) {
    return read_pod<std::uint64_t>(in, what);
}
inline double read_f64(std::istream& in, std::string_view what) {
    return read_pod<double>(in, what);
}

inline void write_string(std::ostream& out, std::string_view s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::string_view what) {
    const auto n = read_u32(in, what);
    if (n > (1u << 24)) throw DataError("implausible string length while reading " + std::string(what));
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw DataError("truncated binary input while reading " + std::string(what));
    return s;
}

inline void write_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic, std::string_view what) {
    std::array<char, 8> buf{};
    in.read(buf.data(), static_cast<std::streamsize>(magic.size()));
    if (!in || std::string_view(buf.data(), magic.size()) != magic)
        throw DataError("not a " + std::string(what) + " file (bad magic)");
}

}  // namespace actrec::binio
