#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "patchcert/io.hpp"
#include "patchcert/tensor.hpp"

namespace patchcert {

struct LabeledImage {
    Tensor pixels;  // 1 x h x w x c, values in [0,1]
    int label = 0;
};

enum class Split { train, test, holdout };

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::holdout: return "holdout";
    }
    return "unknown";
}

struct Dataset {
    std::vector<LabeledImage> items;
    Split split = Split::train;
    std::string source;
    int classes = 0;
    int height = 0;
    int width = 0;
    int channels = 0;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses records of one label byte followed by `channels` row-major byte planes.
inline std::vector<LabeledImage> parse_records(std::string_view bytes, int height, int width,
                                               int channels, int classes,
                                               const std::string& origin) {
    const std::size_t plane = static_cast<std::size_t>(height) * width;
    const std::size_t record = 1 + plane * channels;
    if (bytes.size() % record != 0) {
        throw DataError("'" + origin + "': size " + std::to_string(bytes.size()) +
                        " is not a multiple of the " + std::to_string(record) + "-byte record");
    }
    std::vector<LabeledImage> out;
    out.reserve(bytes.size() / record);
    for (std::size_t off = 0; off < bytes.size(); off += record) {
        const int label = static_cast<unsigned char>(bytes[off]);
        if (label >= classes) {
            throw DataError("'" + origin + "': record " + std::to_string(off / record) +
                            " has label " + std::to_string(label) + " >= " +
                            std::to_string(classes));
        }
        LabeledImage img{Tensor(Shape{1, height, width, channels}), label};
        for (int ch = 0; ch < channels; ++ch) {
            const std::size_t base = off + 1 + ch * plane;
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    const auto b = static_cast<unsigned char>(bytes[base + y * width + x]);
                    img.pixels(0, y, x, ch) = static_cast<float>(b) / 255.0f;
                }
            }
        }
        out.push_back(std::move(img));
    }
    return out;
}

inline std::vector<LabeledImage> load_records(const std::filesystem::path& path, int height,
                                              int width, int channels, int classes) {
    if (!std::filesystem::exists(path)) {
        throw DataError("dataset file '" + path.string() + "' does not exist");
    }
    return parse_records(read_file(path), height, width, channels, classes, path.string());
}

inline std::uint8_t quantize(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::string encode_records(const Dataset& d) {
    std::string out;
    for (const auto& img : d.items) {
        const Shape& s = img.pixels.shape();
        out.push_back(static_cast<char>(img.label));
        for (int ch = 0; ch < s.c; ++ch) {
            for (int y = 0; y < s.h; ++y) {
                for (int x = 0; x < s.w; ++x) out.push_back(static_cast<char>(quantize(img.pixels(0, y, x, ch))));
            }
        }
    }
    return out;
}

inline void write_records(const std::filesystem::path& path, const Dataset& d) {
    write_file_atomic(path, encode_records(d));
}

/// Standard binary CIFAR-10 directory: data_batch_1..5.bin and test_batch.bin.
inline std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw DataError("CIFAR-10 directory '" + dir.string() + "' does not exist");
    }
    auto make = [&](Split split) {
        Dataset d;
        d.split = split;
        d.source = "cifar10:" + dir.string();
        d.classes = 10;
        d.height = 32;
        d.width = 32;
        d.channels = 3;
        return d;
    };
    Dataset train = make(Split::train);
    for (int i = 1; i <= 5; ++i) {
        auto part = load_records(dir / ("data_batch_" + std::to_string(i) + ".bin"), 32, 32, 3, 10);
        std::move(part.begin(), part.end(), std::back_inserter(train.items));
    }
    Dataset test = make(Split::test);
    test.items = load_records(dir / "test_batch.bin", 32, 32, 3, 10);
    return {std::move(train), std::move(test)};
}

/// Two-class stripe textures: label 0 varies along rows (horizontal stripes),
/// label 1 along columns (vertical stripes). Phase, period, contrast, tint and
/// pixel noise are drawn per image. Pixels are byte-quantized.
inline Dataset synth_textures(int n_per_class, int height, int width, std::uint64_t seed,
                              int channels = 3) {
    if (height < 8 || width < 8) throw std::invalid_argument("synth_textures: need h, w >= 8");
    if (n_per_class < 1) throw std::invalid_argument("synth_textures: need n_per_class >= 1");
    std::mt19937_64 rng(seed);
    std::vector<int> labels;
    for (int c = 0; c < 2; ++c) labels.insert(labels.end(), n_per_class, c);
    std::shuffle(labels.begin(), labels.end(), rng);

    std::uniform_real_distribution<double> period(3.0, 6.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> contrast(0.15, 0.4);
    std::uniform_real_distribution<double> base(0.35, 0.65);
    std::uniform_real_distribution<double> tint(0.85, 1.15);
    std::normal_distribution<double> noise(0.0, 0.08);

    Dataset d;
    d.split = Split::train;
    d.source = "synthetic:seed=" + std::to_string(seed);
    d.classes = 2;
    d.height = height;
    d.width = width;
    d.channels = channels;
    for (int label : labels) {
        const double p = period(rng);
        const double ph = phase(rng);
        const double a = contrast(rng);
        const double mean = base(rng);
        std::vector<double> tints(channels);
        for (auto& t : tints) t = tint(rng);
        LabeledImage img{Tensor(Shape{1, height, width, channels}), label};
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double coord = label == 0 ? y : x;
                const double v = mean + a * std::sin(2.0 * std::numbers::pi * coord / p + ph);
                for (int ch = 0; ch < channels; ++ch) {
                    const double px = std::clamp(v * tints[ch] + noise(rng), 0.0, 1.0);
                    img.pixels(0, y, x, ch) = static_cast<float>(quantize(static_cast<float>(px))) / 255.0f;
                }
            }
        }
        d.items.push_back(std::move(img));
    }
    return d;
}

/// Deterministic split: a seeded `fraction` of items becomes the holdout set.
/// Both parts keep the original relative order.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& d, double fraction,
                                                 std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("split_holdout: fraction must be in (0,1)");
    }
    if (d.size() < 2) throw std::invalid_argument("split_holdout: need at least two items");
    std::vector<std::size_t> idx(d.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_hold = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(fraction * static_cast<double>(d.size()))), 1,
        d.size() - 1);
    std::vector<bool> in_hold(d.size(), false);
    for (std::size_t i = 0; i < n_hold; ++i) in_hold[idx[i]] = true;
    Dataset train = d;
    Dataset hold = d;
    train.items.clear();
    hold.items.clear();
    train.split = Split::train;
    hold.split = Split::holdout;
    for (std::size_t i = 0; i < d.size(); ++i) (in_hold[i] ? hold : train).items.push_back(d.items[i]);
    return {std::move(train), std::move(hold)};
}

inline LabeledImage flip_horizontal(const LabeledImage& img) {
    LabeledImage out = img;
    const Shape& s = img.pixels.shape();
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            for (int c = 0; c < s.c; ++c) out.pixels(0, y, x, c) = img.pixels(0, y, s.w - 1 - x, c);
        }
    }
    return out;
}

/// Zero-pads by `pad` on every side and crops the original size at (dy, dx), 0 <= dy, dx <= 2*pad.
inline LabeledImage pad_crop(const LabeledImage& img, int pad, int dy, int dx) {
    if (dy < 0 || dx < 0 || dy > 2 * pad || dx > 2 * pad) {
        throw std::invalid_argument("pad_crop: offset outside padded image");
    }
    LabeledImage out{Tensor(img.pixels.shape()), img.label};
    const Shape& s = img.pixels.shape();
    for (int y = 0; y < s.h; ++y) {
        const int sy = y + dy - pad;
        if (sy < 0 || sy >= s.h) continue;
        for (int x = 0; x < s.w; ++x) {
            const int sx = x + dx - pad;
            if (sx < 0 || sx >= s.w) continue;
            for (int c = 0; c < s.c; ++c) out.pixels(0, y, x, c) = img.pixels(0, sy, sx, c);
        }
    }
    return out;
}

struct AugmentOptions {
    bool flip = true;
    bool crop = true;
    int pad = 4;
};

/// Random horizontal flip (p = 0.5), then zero-pad and random crop.
inline LabeledImage augment(const LabeledImage& img, std::mt19937_64& rng,
                            const AugmentOptions& opt = {}) {
    LabeledImage out = img;
    if (opt.flip && std::bernoulli_distribution(0.5)(rng)) out = flip_horizontal(out);
    if (opt.crop && opt.pad > 0) {
        std::uniform_int_distribution<int> off(0, 2 * opt.pad);
        const int dy = off(rng);
        const int dx = off(rng);
        out = pad_crop(out, opt.pad, dy, dx);
    }
    return out;
}

}  // namespace patchcert
