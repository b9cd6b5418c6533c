#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchcert/tensor.hpp"

namespace patchcert {

template <class T>
struct score_traits;

template <>
struct score_traits<std::uint8_t> {
    using delta_type = std::int8_t;
    using accum_type = std::int64_t;
    static constexpr bool binary = true;
};

template <>
struct score_traits<float> {
    using delta_type = float;
    using accum_type = double;
    static constexpr bool binary = false;
};

/// Region scores laid out (row, col, class), row-major.
template <class T>
class BasicScoreMap {
public:
    BasicScoreMap() = default;

    BasicScoreMap(int rows, int cols, int classes, T fill = T{})
        : rows_(rows), cols_(cols), classes_(classes) {
        check_dims();
        values_.assign(static_cast<std::size_t>(rows) * cols * classes, fill);
        check_values();
    }

    BasicScoreMap(int rows, int cols, int classes, std::vector<T> values)
        : rows_(rows), cols_(cols), classes_(classes), values_(std::move(values)) {
        check_dims();
        if (values_.size() != static_cast<std::size_t>(rows) * cols * classes) {
            throw std::invalid_argument("score map: " + std::to_string(values_.size()) +
                                        " values for " + std::to_string(rows) + "x" +
                                        std::to_string(cols) + "x" + std::to_string(classes));
        }
        check_values();
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int classes() const { return classes_; }
    std::size_t size() const { return values_.size(); }

    T at(int i, int j, int c) const { return values_[index(i, j, c)]; }

    void set(int i, int j, int c, T v) {
        if constexpr (score_traits<T>::binary) {
            if (v > 1) throw std::invalid_argument("score map: binary entry must be 0 or 1");
        } else {
            if (!(v >= T{0} && v <= T{1})) {
                throw std::invalid_argument("score map: relaxed entry outside [0,1]");
            }
        }
        values_[index(i, j, c)] = v;
    }

    const std::vector<T>& values() const { return values_; }

    friend bool operator==(const BasicScoreMap&, const BasicScoreMap&) = default;

private:
    std::size_t index(int i, int j, int c) const {
        return (static_cast<std::size_t>(i) * cols_ + j) * classes_ + c;
    }

    void check_dims() const {
        if (rows_ < 1 || cols_ < 1 || classes_ < 1) {
            throw std::invalid_argument("score map: dimensions must be positive");
        }
    }

    void check_values() const {
        for (T v : values_) {
            if constexpr (score_traits<T>::binary) {
                if (v > 1) throw std::invalid_argument("score map: binary entry must be 0 or 1");
            } else {
                if (!(v >= T{0} && v <= T{1})) {
                    throw std::invalid_argument("score map: relaxed entry outside [0,1]");
                }
            }
        }
    }

    int rows_ = 0;
    int cols_ = 0;
    int classes_ = 0;
    std::vector<T> values_;
};

using ScoreMap = BasicScoreMap<std::uint8_t>;
using RelaxedScoreMap = BasicScoreMap<float>;

/// Batch item `n` of a head output tensor as a binary score map; entries must be exactly 0 or 1.
inline ScoreMap binary_map_from_head(const Tensor& head, int n) {
    const Shape& s = head.shape();
    std::vector<std::uint8_t> v(static_cast<std::size_t>(s.h) * s.w * s.c);
    const std::size_t base = head.offset(n, 0, 0, 0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float x = head[base + i];
        if (x != 0.0f && x != 1.0f) {
            throw std::invalid_argument("head output is not binary; use a relaxed score map");
        }
        v[i] = static_cast<std::uint8_t>(x);
    }
    return ScoreMap(s.h, s.w, s.c, std::move(v));
}

inline RelaxedScoreMap relaxed_map_from_head(const Tensor& head, int n) {
    const Shape& s = head.shape();
    const std::size_t base = head.offset(n, 0, 0, 0);
    std::vector<float> v(head.data() + base, head.data() + base + s.h * s.w * s.c);
    return RelaxedScoreMap(s.h, s.w, s.c, std::move(v));
}

// Blob format: "PCSM", u32 LE rows, u32 LE cols, u32 LE classes, one byte per entry.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff),
                                static_cast<char>((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

inline std::uint32_t get_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_score_map(std::ostream& out, const ScoreMap& s) {
    out.write("PCSM", 4);
    detail::put_u32(out, static_cast<std::uint32_t>(s.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(s.cols()));
    detail::put_u32(out, static_cast<std::uint32_t>(s.classes()));
    out.write(reinterpret_cast<const char*>(s.values().data()),
              static_cast<std::streamsize>(s.size()));
    if (!out) throw std::runtime_error("score map: write failed");
}

/// Reads one blob; returns nullopt on clean end of stream.
inline std::optional<ScoreMap> read_score_map(std::istream& in) {
    std::array<unsigned char, 16> header{};
    in.read(reinterpret_cast<char*>(header.data()), 16);
    if (in.gcount() == 0) return std::nullopt;
    if (in.gcount() != 16) throw std::runtime_error("score map: truncated header");
    if (std::string(reinterpret_cast<const char*>(header.data()), 4) != "PCSM") {
        throw std::runtime_error("score map: bad magic");
    }
    const auto rows = detail::get_u32(header.data() + 4);
    const auto cols = detail::get_u32(header.data() + 8);
    const auto classes = detail::get_u32(header.data() + 12);
    constexpr std::uint32_t limit = 1u << 16;
    if (rows == 0 || cols == 0 || classes == 0 || rows > limit || cols > limit || classes > limit) {
        throw std::runtime_error("score map: implausible dimensions");
    }
    std::vector<std::uint8_t> values(static_cast<std::size_t>(rows) * cols * classes);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size()));
    if (static_cast<std::size_t>(in.gcount()) != values.size()) {
        throw std::runtime_error("score map: truncated payload");
    }
    return ScoreMap(static_cast<int>(rows), static_cast<int>(cols), static_cast<int>(classes),
                    std::move(values));
}

}  // namespace patchcert
