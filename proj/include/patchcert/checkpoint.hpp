#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "patchcert/io.hpp"
#include "patchcert/model.hpp"

namespace patchcert {

// Layout (all integers little-endian):
//   "PCKP" | u32 version
//   | u32 in_h, in_w, in_c, stem_kernel, stem_width, classes, head_activation, block_count
//   | block_count x (u32 kernel, stride, width)
//   | u64 float_count | float_count x f32 (parameters in canonical layout order)
//   | u64 training_step

inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
    NetworkSpec spec;
    Parameters params;
    std::uint64_t step = 0;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint64_t uint(int width, const char* what) {
        if (pos_ + width > bytes_.size()) {
            throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
        }
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += width;
        return v;
    }
    std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(uint(4, what)); }
    std::uint64_t u64(const char* what) { return uint(8, what); }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    const auto layout = parameter_layout(ck.spec);
    std::string out = "PCKP";
    detail::append_u32(out, checkpoint_version);
    const auto& s = ck.spec;
    for (int v : {s.in_h, s.in_w, s.in_c, s.stem_kernel, s.stem_width, s.classes}) {
        detail::append_u32(out, static_cast<std::uint32_t>(v));
    }
    detail::append_u32(out, static_cast<std::uint32_t>(s.head));
    detail::append_u32(out, static_cast<std::uint32_t>(s.blocks.size()));
    for (const auto& b : s.blocks) {
        detail::append_u32(out, static_cast<std::uint32_t>(b.kernel));
        detail::append_u32(out, static_cast<std::uint32_t>(b.stride));
        detail::append_u32(out, static_cast<std::uint32_t>(b.width));
    }
    if (ck.params.tensors.size() != layout.size()) {
        throw CheckpointError("checkpoint: parameters do not match spec layout");
    }
    detail::append_u64(out, ck.params.element_count());
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (ck.params.tensors[i].shape() != layout[i].shape) {
            throw CheckpointError("checkpoint: parameter '" + layout[i].name + "' has wrong shape");
        }
        for (float v : ck.params.tensors[i].values()) {
            detail::append_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    detail::append_u64(out, ck.step);
    return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "PCKP") {
        throw CheckpointError("checkpoint: bad magic (expected PCKP)");
    }
    detail::ByteReader r(bytes.substr(4));
    const auto version = r.u32("version");
    if (version != checkpoint_version) {
        throw CheckpointError("checkpoint: version " + std::to_string(version) +
                              " is not supported (this build reads version " +
                              std::to_string(checkpoint_version) + ")");
    }
    Checkpoint ck;
    auto& s = ck.spec;
    s.in_h = static_cast<int>(r.u32("spec"));
    s.in_w = static_cast<int>(r.u32("spec"));
    s.in_c = static_cast<int>(r.u32("spec"));
    s.stem_kernel = static_cast<int>(r.u32("spec"));
    s.stem_width = static_cast<int>(r.u32("spec"));
    s.classes = static_cast<int>(r.u32("spec"));
    const auto head = r.u32("spec");
    if (head > static_cast<std::uint32_t>(Activation::softmax_channel)) {
        throw CheckpointError("checkpoint: unknown head activation " + std::to_string(head));
    }
    s.head = static_cast<Activation>(head);
    const auto blocks = r.u32("spec");
    if (blocks > 4096) throw CheckpointError("checkpoint: implausible block count");
    for (std::uint32_t i = 0; i < blocks; ++i) {
        BlockSpec b;
        b.kernel = static_cast<int>(r.u32("block"));
        b.stride = static_cast<int>(r.u32("block"));
        b.width = static_cast<int>(r.u32("block"));
        s.blocks.push_back(b);
    }
    std::vector<ParamSlot> layout;
    try {
        layout = parameter_layout(s);
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
    std::uint64_t expected = 0;
    for (const auto& slot : layout) expected += slot.shape.size();
    const auto count = r.u64("parameter count");
    if (count != expected) {
        throw CheckpointError("checkpoint: " + std::to_string(count) + " parameters, spec needs " +
                              std::to_string(expected));
    }
    for (const auto& slot : layout) {
        Tensor t(slot.shape);
        for (auto& v : t.values()) v = std::bit_cast<float>(r.u32("parameters"));
        ck.params.names.push_back(slot.name);
        ck.params.tensors.push_back(std::move(t));
    }
    ck.step = r.u64("training step");
    if (!r.at_end()) throw CheckpointError("checkpoint: trailing bytes");
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(e.what());
    }
    return decode_checkpoint(bytes);
}

}  // namespace patchcert
