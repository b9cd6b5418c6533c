#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchcert/ops.hpp"

namespace patchcert {

/// Attack rectangle in input-pixel coordinates.
struct PatchRegion {
    int top = 0;
    int left = 0;
    int height = 1;
    int width = 1;

    int area() const { return height * width; }
    bool contains(int row, int col) const {
        return row >= top && row < top + height && col >= left && col < left + width;
    }
    friend bool operator==(const PatchRegion&, const PatchRegion&) = default;
};

using RegionSet = std::vector<PatchRegion>;

struct LayerGeom {
    int kernel = 1;
    int stride = 1;
    int padding = 0;

    static LayerGeom same(int kernel, int stride = 1) { return {kernel, stride, kernel / 2}; }
    friend bool operator==(const LayerGeom&, const LayerGeom&) = default;
};

/// Input resolution plus the spatial layers of a network in execution order.
struct NetGeometry {
    int in_h = 0;
    int in_w = 0;
    std::vector<LayerGeom> layers;
};

struct ReceptiveField {
    int rf_h = 1;
    int rf_w = 1;
    int out_h = 0;
    int out_w = 0;
    int stride_product = 1;
};

/// Output-space rectangle [row_begin, row_end) x [col_begin, col_end).
struct DependencyRegion {
    int row_begin = 0;
    int row_end = 0;
    int col_begin = 0;
    int col_end = 0;

    bool empty() const { return row_end <= row_begin || col_end <= col_begin; }
    int cardinality() const { return empty() ? 0 : (row_end - row_begin) * (col_end - col_begin); }
    bool contains(int row, int col) const {
        return row >= row_begin && row < row_end && col >= col_begin && col < col_end;
    }
    friend bool operator==(const DependencyRegion&, const DependencyRegion&) = default;
};

inline void validate(const LayerGeom& g) {
    if ((g.kernel != 1 && g.kernel != 3) || (g.stride != 1 && g.stride != 2) ||
        g.padding != g.kernel / 2) {
        throw std::invalid_argument("layer geometry: kernel " + std::to_string(g.kernel) +
                                    ", stride " + std::to_string(g.stride) + ", padding " +
                                    std::to_string(g.padding) +
                                    " (need kernel 1|3, stride 1|2, padding kernel/2)");
    }
}

inline void validate(const NetGeometry& net) {
    if (net.layers.empty()) throw std::invalid_argument("network geometry has no layers");
    if (net.in_h < 1 || net.in_w < 1) throw std::invalid_argument("network geometry: empty input");
    for (const auto& l : net.layers) validate(l);
}

inline ReceptiveField receptive_field(const NetGeometry& net) {
    validate(net);
    ReceptiveField rf;
    rf.out_h = net.in_h;
    rf.out_w = net.in_w;
    int jump = 1;
    for (const auto& l : net.layers) {
        rf.rf_h += (l.kernel - 1) * jump;
        rf.rf_w += (l.kernel - 1) * jump;
        jump *= l.stride;
        rf.out_h = conv_output_size(rf.out_h, l.kernel, l.stride, l.padding);
        rf.out_w = conv_output_size(rf.out_w, l.kernel, l.stride, l.padding);
    }
    rf.stride_product = jump;
    return rf;
}

inline RegionSet enumerate_regions(int h_in, int w_in, int h_p, int w_p) {
    if (h_p < 1 || w_p < 1 || h_p > h_in || w_p > w_in) {
        throw std::invalid_argument("patch " + std::to_string(h_p) + "x" + std::to_string(w_p) +
                                    " does not fit input " + std::to_string(h_in) + "x" +
                                    std::to_string(w_in));
    }
    RegionSet out;
    out.reserve(static_cast<std::size_t>(h_in - h_p + 1) * (w_in - w_p + 1));
    for (int top = 0; top + h_p <= h_in; ++top) {
        for (int left = 0; left + w_p <= w_in; ++left) out.push_back({top, left, h_p, w_p});
    }
    return out;
}

namespace detail {

inline int floor_div(int a, int b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); }
inline int ceil_div(int a, int b) { return -floor_div(-a, b); }

struct Interval {
    int lo;  // inclusive
    int hi;  // inclusive; lo > hi means empty
};

/// Output units of one layer whose kernel window touches the input interval.
inline Interval propagate(Interval in, int in_size, const LayerGeom& g, int& out_size) {
    out_size = conv_output_size(in_size, g.kernel, g.stride, g.padding);
    if (in.lo > in.hi) return in;
    int lo = ceil_div(in.lo + g.padding - g.kernel + 1, g.stride);
    int hi = floor_div(in.hi + g.padding, g.stride);
    lo = std::max(lo, 0);
    hi = std::min(hi, out_size - 1);
    return {lo, hi};
}

}  // namespace detail

/// Score-map rectangle whose receptive fields overlap `l`, by exact per-layer
/// interval propagation (handles strides and border clipping).
inline DependencyRegion dependency_region(const PatchRegion& l, const NetGeometry& net) {
    validate(net);
    if (l.top < 0 || l.left < 0 || l.height < 1 || l.width < 1 || l.top + l.height > net.in_h ||
        l.left + l.width > net.in_w) {
        throw std::invalid_argument("patch region outside input");
    }
    detail::Interval rows{l.top, l.top + l.height - 1};
    detail::Interval cols{l.left, l.left + l.width - 1};
    int h = net.in_h;
    int w = net.in_w;
    for (const auto& g : net.layers) {
        int oh = 0;
        int ow = 0;
        rows = detail::propagate(rows, h, g, oh);
        cols = detail::propagate(cols, w, g, ow);
        h = oh;
        w = ow;
    }
    DependencyRegion r{rows.lo, rows.hi + 1, cols.lo, cols.hi + 1};
    if (r.empty()) r = DependencyRegion{};
    return r;
}

inline std::vector<DependencyRegion> dependency_regions(const RegionSet& regions,
                                                        const NetGeometry& net) {
    std::vector<DependencyRegion> out;
    out.reserve(regions.size());
    for (const auto& l : regions) out.push_back(dependency_region(l, net));
    return out;
}

inline int r_max(const RegionSet& regions, const NetGeometry& net) {
    if (regions.empty()) throw std::invalid_argument("r_max: empty region set");
    int best = 0;
    for (const auto& l : regions) best = std::max(best, dependency_region(l, net).cardinality());
    return best;
}

}  // namespace patchcert
