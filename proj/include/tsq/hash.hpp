#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>

namespace tsq {

/// Incremental 64-bit FNV-1a. Used for content and configuration hashes;
/// not cryptographic.
class Fnv1a64 {
  public:
    Fnv1a64 &update(std::span<const std::byte> bytes) noexcept {
        for (auto b : bytes) {
            h_ ^= static_cast<std::uint64_t>(b);
            h_ *= 0x100000001b3ULL;
        }
        return *this;
    }

    Fnv1a64 &update(std::string_view text) noexcept {
        return update(std::as_bytes(std::span(text.data(), text.size())));
    }

    template <typename T>
        requires std::is_trivially_copyable_v<T>
    Fnv1a64 &update_value(const T &value) noexcept {
        std::byte buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        return update(std::span<const std::byte>(buf, sizeof(T)));
    }

    std::uint64_t digest() const noexcept { return h_; }

  private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a64(std::string_view text) noexcept {
    return Fnv1a64{}.update(text).digest();
}

} // namespace tsq
