#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

namespace csl {

/// 64-bit FNV-1a, used for dataset and grammar fingerprints.
class Fnv1a {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) {
        update(s.data(), s.size());
        update_value(static_cast<std::uint64_t>(s.size()));
    }
    template <class T>
        requires std::is_arithmetic_v<T>
    void update_value(T v) {
        update(&v, sizeof v);
    }
    template <class T>
        requires std::is_arithmetic_v<T>
    void update_values(std::span<const T> v) {
        update(v.data(), v.size_bytes());
    }

    std::uint64_t digest() const { return state_; }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
        return buf;
    }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace csl
