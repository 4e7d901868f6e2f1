#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "evoagent/core/errors.hpp"

namespace evoagent {

// Little-endian binary primitives for the snapshot formats. All multi-byte
// fields in the model/pool containers go through these so files round-trip
// bit-exactly regardless of host endianness.
namespace binio {

static_assert(sizeof(double) == 8);

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T> && sizeof(T) <= 8);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw IoError("unexpected end of stream");
    if constexpr (std::endian::native == std::endian::big) {
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline void write_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_le<uint64_t>(os, bits);
}

inline double read_f64(std::istream& is) {
    const uint64_t bits = read_le<uint64_t>(is);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void write_f64_vec(std::ostream& os, const std::vector<double>& v) {
    write_le<uint64_t>(os, v.size());
    for (double x : v) write_f64(os, x);
}

inline std::vector<double> read_f64_vec(std::istream& is) {
    const uint64_t n = read_le<uint64_t>(is);
    std::vector<double> v(n);
    for (auto& x : v) x = read_f64(is);
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_le<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const uint32_t n = read_le<uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw IoError("unexpected end of stream");
    return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0) throw IoError(std::string("bad magic, expected ") + magic);
}

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

}  // namespace binio
}  // namespace evoagent
