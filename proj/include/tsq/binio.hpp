#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsq/errors.hpp"

namespace tsq {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

/// Append-only little-endian byte sink.
class ByteWriter {
  public:
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void magic(std::string_view m) { raw(m.data(), m.size()); }
    void string(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void f32s(std::span<const float> values) {
        raw(values.data(), values.size_bytes());
    }

    const std::vector<std::byte> &bytes() const noexcept { return buf_; }
    std::vector<std::byte> take() noexcept { return std::move(buf_); }

  private:
    void raw(const void *p, std::size_t n) {
        const auto *b = static_cast<const std::byte *>(p);
        buf_.insert(buf_.end(), b, b + n);
    }

    std::vector<std::byte> buf_;
};

/// Bounds-checked little-endian reader over a byte span.
class ByteReader {
  public:
    ByteReader(std::span<const std::byte> data, std::string what)
        : data_(data), what_(std::move(what)) {}

    std::uint8_t u8() { return read<std::uint8_t>(); }
    std::uint16_t u16() { return read<std::uint16_t>(); }
    std::uint32_t u32() { return read<std::uint32_t>(); }
    std::uint64_t u64() { return read<std::uint64_t>(); }
    float f32() { return read<float>(); }

    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(data_.data() + pos_, m.data(), m.size()) != 0) {
            throw DecodeError(what_ + ": bad magic, expected '" + std::string(m) + "'");
        }
        pos_ += m.size();
    }

    std::string string() {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char *>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void f32s(std::span<float> out) {
        need(out.size_bytes());
        std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
        pos_ += out.size_bytes();
    }

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }

  private:
    template <typename T>
    T read() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw DecodeError(what_ + ": truncated at byte " + std::to_string(pos_));
        }
    }

    std::span<const std::byte> data_;
    std::size_t pos_ = 0;
    std::string what_;
};

std::vector<std::byte> read_file_bytes(const std::filesystem::path &path);
std::string read_file_text(const std::filesystem::path &path);

/// Writes via a sibling temporary and renames into place, so readers never
/// observe a half-written file.
void write_file_atomic(const std::filesystem::path &path, std::span<const std::byte> bytes);
void write_file_atomic(const std::filesystem::path &path, std::string_view text);

/// Exclusive `<target>.lock` file held for the lifetime of the object.
class LockFile {
  public:
    explicit LockFile(const std::filesystem::path &target);
    ~LockFile();
    LockFile(const LockFile &) = delete;
    LockFile &operator=(const LockFile &) = delete;

  private:
    std::filesystem::path path_;
};

} // namespace tsq
