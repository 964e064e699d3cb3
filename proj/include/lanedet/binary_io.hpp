#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "lanedet/errors.hpp"

namespace lanedet {

// Little-endian encoder into a growable byte buffer.
class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_le(bits, 4);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_le(bits, 8);
    }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

// Little-endian decoder; every short read raises FormatError with the offset.
class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get_le(1, what)); }
    std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get_le(2, what)); }
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get_le(4, what)); }
    float f32(const char* what) {
        const auto bits = static_cast<std::uint32_t>(get_le(4, what));
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64(const char* what) {
        const std::uint64_t bits = get_le(8, what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    const std::uint8_t* raw(std::size_t n, const char* what) {
        need(n, what);
        const auto* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == buf_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (buf_.size() - pos_ < n) throw FormatError(std::string("truncated input while reading ") + what, pos_);
    }
    std::uint64_t get_le(int n, const char* what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const std::vector<std::uint8_t>& buf_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace lanedet
