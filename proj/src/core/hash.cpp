#include "evoagent/core/hash.hpp"

#include <cstdio>

namespace evoagent {

std::string hex64(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace evoagent
