#pragma once

#include "rsplat/core.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace rsplat::binary {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

/// Append-only little-endian byte sink.
class Writer {
  public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void tag(std::string_view s) { bytes(s.data(), s.size()); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void f32(float v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    /// u64 length prefix followed by the values.
    void f64_array(const std::vector<double>& v) {
        u64(v.size());
        bytes(v.data(), v.size() * sizeof(double));
    }
    void u32_array(const std::vector<std::uint32_t>& v) {
        u64(v.size());
        bytes(v.data(), v.size() * sizeof(std::uint32_t));
    }
    void string(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    [[nodiscard]] const std::vector<std::uint8_t>& data() const { return buf_; }

  private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; throws TruncationError on overrun.
class Reader {
  public:
    Reader(const std::uint8_t* data, std::size_t size, std::string context)
        : data_(data), size_(size), context_(std::move(context)) {}

    void bytes(void* out, std::size_t n) {
        if (n > size_ - pos_) throw TruncationError(context_ + ": unexpected end of data");
        std::memcpy(out, data_ + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    float f32() {
        float v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    std::vector<double> f64_array() {
        const std::uint64_t n = u64();
        if (n > remaining() / sizeof(double)) throw TruncationError(context_ + ": array length exceeds payload");
        std::vector<double> v(n);
        bytes(v.data(), n * sizeof(double));
        return v;
    }
    std::vector<std::uint32_t> u32_array() {
        const std::uint64_t n = u64();
        if (n > remaining() / sizeof(std::uint32_t)) throw TruncationError(context_ + ": array length exceeds payload");
        std::vector<std::uint32_t> v(n);
        bytes(v.data(), n * sizeof(std::uint32_t));
        return v;
    }
    std::string string() {
        const std::uint64_t n = u64();
        if (n > remaining()) throw TruncationError(context_ + ": string length exceeds payload");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    [[nodiscard]] std::size_t remaining() const { return size_ - pos_; }
    [[nodiscard]] const std::string& context() const { return context_; }

  private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string context_;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace rsplat::binary
