#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

namespace evoagent {

// FNV-1a over raw bytes. Used for state hashes, config fingerprints and
// snapshot integrity checks; stable across platforms for identical bytes.
class Fnv1a {
public:
    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            hash_ ^= p[i];
            hash_ *= 0x100000001b3ULL;
        }
    }

    void update(std::string_view s) { update(s.data(), s.size()); }

    template <typename T>
    void update_pod(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        update(&v, sizeof(T));
    }

    uint64_t digest() const { return hash_; }

private:
    uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline uint64_t fnv1a(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.digest();
}

std::string hex64(uint64_t v);

}  // namespace evoagent
