#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchcert/certifier.hpp"
#include "patchcert/data.hpp"
#include "patchcert/geometry.hpp"
#include "patchcert/model.hpp"

namespace patchcert {

/// Feasible regions for one patch shape with their precomputed dependency rectangles.
struct PatchPlan {
    int patch_h = 0;
    int patch_w = 0;
    RegionSet regions;
    std::vector<DependencyRegion> dependencies;
    int r_max = 0;

    static PatchPlan make(const NetGeometry& net, int patch_h, int patch_w) {
        PatchPlan p;
        p.patch_h = patch_h;
        p.patch_w = patch_w;
        p.regions = enumerate_regions(net.in_h, net.in_w, patch_h, patch_w);
        p.dependencies = dependency_regions(p.regions, net);
        for (const auto& d : p.dependencies) p.r_max = std::max(p.r_max, d.cardinality());
        return p;
    }
};

struct ExampleReport {
    int label = 0;
    int predicted = 0;
    bool correct = false;
    std::optional<bool> cert_generic;  // only evaluated on request, binary maps only
    bool cert_sum = false;
    bool cert_cheap = false;
    double sum_margin = 0.0;
    double cheap_margin = 0.0;
    std::optional<PatchRegion> limiting_region;
};

/// Certifies one 1xHxWxC head output. Binary heads use the integer path,
/// relaxed heads (sigmoid/softmax) the real-valued one.
inline ExampleReport certify_head(const Tensor& head, int label, const PatchPlan& plan,
                                  bool binary, bool with_generic = false) {
    ExampleReport r;
    r.label = label;
    auto fill = [&](const auto& map) {
        const auto sum = certify_sum(map, label, plan.dependencies, &plan.regions);
        const auto cheap = certify_cheap(map, label, plan.r_max);
        r.predicted = sum.predicted;
        r.correct = sum.predicted == label;
        r.cert_sum = sum.certified;
        r.cert_cheap = cheap.certified;
        r.sum_margin = static_cast<double>(sum.margin);
        r.cheap_margin = static_cast<double>(cheap.margin);
        r.limiting_region = sum.limiting_region;
    };
    if (binary) {
        const auto map = binary_map_from_head(head, 0);
        fill(map);
        if (with_generic) {
            std::vector<IndexSet> sets;
            sets.reserve(plan.dependencies.size());
            for (const auto& d : plan.dependencies) sets.push_back(to_index_set(d));
            r.cert_generic = certify_generic(map, label, sets, sum_aggregator()).certified;
        }
    } else {
        if (with_generic) throw std::invalid_argument("generic condition needs a binary head");
        fill(relaxed_map_from_head(head, 0));
    }
    return r;
}

class NonFiniteOutput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Head outputs for every item of a dataset, one 1xHxWxC tensor each.
inline std::vector<Tensor> head_outputs(const Parameters& params, const NetworkSpec& spec,
                                        const Dataset& data, Activation mode, int batch = 64) {
    std::vector<Tensor> out;
    out.reserve(data.size());
    for (std::size_t start = 0; start < data.size(); start += batch) {
        const std::size_t end = std::min(data.size(), start + batch);
        std::vector<Tensor> xs;
        for (std::size_t i = start; i < end; ++i) xs.push_back(data.items[i].pixels);
        const auto res = forward(params, spec, stack<float>(xs), mode);
        if (!res.head.all_finite()) {
            throw NonFiniteOutput("non-finite head output for items " + std::to_string(start) +
                                  ".." + std::to_string(end - 1));
        }
        for (int n = 0; n < res.head.shape().n; ++n) out.push_back(res.head.item(n));
    }
    return out;
}

struct Accuracy {
    std::size_t n = 0;
    std::size_t clean = 0;
    std::size_t cert_sum = 0;
    std::size_t cert_cheap = 0;

    double clean_rate() const { return n ? static_cast<double>(clean) / n : 0.0; }
    double sum_rate() const { return n ? static_cast<double>(cert_sum) / n : 0.0; }
    double cheap_rate() const { return n ? static_cast<double>(cert_cheap) / n : 0.0; }
};

inline Accuracy evaluate(const Parameters& params, const NetworkSpec& spec, const Dataset& data,
                         Activation mode, const PatchPlan& plan) {
    const auto heads = head_outputs(params, spec, data, mode);
    Accuracy acc;
    for (std::size_t i = 0; i < heads.size(); ++i) {
        const auto r = certify_head(heads[i], data.items[i].label, plan,
                                    mode == Activation::heaviside_st);
        acc.n += 1;
        acc.clean += r.correct;
        acc.cert_sum += r.cert_sum;
        acc.cert_cheap += r.cert_cheap;
    }
    return acc;
}

}  // namespace patchcert
