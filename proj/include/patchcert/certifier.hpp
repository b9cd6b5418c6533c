#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "patchcert/geometry.hpp"
#include "patchcert/score_map.hpp"

namespace patchcert {

template <class Acc>
struct ClassScores {
    int predicted = 0;
    bool tied = false;  // another class shares the top score
    std::vector<Acc> scores;
};

/// Spatial sum aggregation; argmax with lowest-index tie-break.
template <class T>
auto classify(const BasicScoreMap<T>& s) {
    using Acc = typename score_traits<T>::accum_type;
    ClassScores<Acc> out;
    out.scores.assign(s.classes(), Acc{0});
    const auto& v = s.values();
    const int c = s.classes();
    Acc* acc = out.scores.data();
    for (std::size_t p = 0; p < v.size(); p += static_cast<std::size_t>(c)) {
        const T* cell = v.data() + p;
        for (int k = 0; k < c; ++k) acc[k] += static_cast<Acc>(cell[k]);
    }
    for (int k = 1; k < c; ++k) {
        if (out.scores[k] > out.scores[out.predicted]) out.predicted = k;
    }
    for (int k = 0; k < c; ++k) {
        if (k != out.predicted && out.scores[k] == out.scores[out.predicted]) out.tied = true;
    }
    return out;
}

/// Delta_{i,j,c} = s_{i,j,true} - s_{i,j,c}.
template <class T>
class DeltaMap {
public:
    using value_type = typename score_traits<T>::delta_type;

    DeltaMap(const BasicScoreMap<T>& s, int true_class)
        : rows_(s.rows()), cols_(s.cols()), classes_(s.classes()), true_class_(true_class) {
        if (true_class < 0 || true_class >= s.classes()) {
            throw std::invalid_argument("delta map: class " + std::to_string(true_class) +
                                        " out of range");
        }
        values_.resize(s.size());
        for (int i = 0; i < rows_; ++i) {
            for (int j = 0; j < cols_; ++j) {
                const auto t = static_cast<value_type>(s.at(i, j, true_class));
                for (int c = 0; c < classes_; ++c) {
                    values_[index(i, j, c)] =
                        static_cast<value_type>(t - static_cast<value_type>(s.at(i, j, c)));
                }
            }
        }
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int classes() const { return classes_; }
    int true_class() const { return true_class_; }
    value_type at(int i, int j, int c) const { return values_[index(i, j, c)]; }

private:
    std::size_t index(int i, int j, int c) const {
        return (static_cast<std::size_t>(i) * cols_ + j) * classes_ + c;
    }

    int rows_;
    int cols_;
    int classes_;
    int true_class_;
    std::vector<value_type> values_;
};

template <class T>
DeltaMap<T> delta_map(const BasicScoreMap<T>& s, int true_class) {
    return DeltaMap<T>(s, true_class);
}

template <class T>
struct WorstCaseMap {
    BasicScoreMap<T> map;
    DependencyRegion region;
};

/// Inside `region`: every non-true class raised to 1, the true class dropped to 0.
template <class T>
WorstCaseMap<T> worst_case_map(const BasicScoreMap<T>& s, int true_class,
                               const DependencyRegion& region) {
    if (true_class < 0 || true_class >= s.classes()) {
        throw std::invalid_argument("worst-case map: class out of range");
    }
    if (!region.empty() && (region.row_begin < 0 || region.col_begin < 0 ||
                            region.row_end > s.rows() || region.col_end > s.cols())) {
        throw std::invalid_argument("worst-case map: region outside score grid");
    }
    WorstCaseMap<T> out{s, region};
    if (region.empty()) return out;
    for (int i = region.row_begin; i < region.row_end; ++i) {
        for (int j = region.col_begin; j < region.col_end; ++j) {
            for (int c = 0; c < s.classes(); ++c) out.map.set(i, j, c, c == true_class ? T{0} : T{1});
        }
    }
    return out;
}

/// Per-class summed-area table of a delta map, (rows+1) x (cols+1) per class.
template <class T>
class IntegralImage {
public:
    using Acc = typename score_traits<T>::accum_type;

    explicit IntegralImage(const DeltaMap<T>& d)
        : rows_(d.rows()), cols_(d.cols()), classes_(d.classes()) {
        table_.assign(static_cast<std::size_t>(rows_ + 1) * (cols_ + 1) * classes_, Acc{0});
        for (int i = 0; i < rows_; ++i) {
            for (int j = 0; j < cols_; ++j) {
                for (int c = 0; c < classes_; ++c) {
                    entry(i + 1, j + 1, c) = static_cast<Acc>(d.at(i, j, c)) + entry(i, j + 1, c) +
                                             entry(i + 1, j, c) - entry(i, j, c);
                }
            }
        }
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    int classes() const { return classes_; }

    /// Sum of delta over [0, i) x [0, j).
    Acc at(int i, int j, int c) const { return table_[index(i, j, c)]; }

    Acc total(int c) const { return at(rows_, cols_, c); }

    Acc region_sum(int c, const DependencyRegion& r) const {
        if (r.empty()) return Acc{0};
        return at(r.row_end, r.col_end, c) - at(r.row_begin, r.col_end, c) -
               at(r.row_end, r.col_begin, c) + at(r.row_begin, r.col_begin, c);
    }

private:
    std::size_t index(int i, int j, int c) const {
        return (static_cast<std::size_t>(i) * (cols_ + 1) + j) * classes_ + c;
    }
    Acc& entry(int i, int j, int c) { return table_[index(i, j, c)]; }

    int rows_;
    int cols_;
    int classes_;
    std::vector<Acc> table_;
};

template <class T>
IntegralImage<T> build_integral_image(const DeltaMap<T>& d) {
    return IntegralImage<T>(d);
}

enum class Condition { generic = 1, sum = 2, cheap = 3 };

template <class Acc>
struct CertificationResult {
    Condition condition = Condition::sum;
    int label = 0;
    int predicted = 0;
    bool correct = false;    // clean prediction equals label with no tie
    bool certified = false;  // correct and margin > 0
    /// Worst slack over regions and classes; the condition holds iff margin > 0.
    Acc margin{};
    std::optional<std::size_t> limiting_index;
    std::optional<PatchRegion> limiting_region;
};

/// Sum-aggregation condition checked per region with four table lookups per class:
/// min_{c != true} (total_c - inside_c) > |R(l)| for every l.
template <class T>
auto certify_sum(const BasicScoreMap<T>& s, int true_class,
                 const std::vector<DependencyRegion>& dependencies, const RegionSet* regions = nullptr) {
    using Acc = typename score_traits<T>::accum_type;
    if (dependencies.empty()) throw std::invalid_argument("certify_sum: empty region set");
    if (s.classes() < 2) throw std::invalid_argument("certify_sum: need at least two classes");
    const auto clean = classify(s);
    CertificationResult<Acc> r;
    r.condition = Condition::sum;
    r.label = true_class;
    r.predicted = clean.predicted;
    r.correct = clean.predicted == true_class && !clean.tied;

    const IntegralImage<T> table(delta_map(s, true_class));
    std::vector<Acc> totals(s.classes());
    for (int c = 0; c < s.classes(); ++c) totals[c] = table.total(c);

    Acc worst = std::numeric_limits<Acc>::max();
    std::size_t worst_index = 0;
    for (std::size_t k = 0; k < dependencies.size(); ++k) {
        const DependencyRegion& dep = dependencies[k];
        const auto card = static_cast<Acc>(dep.cardinality());
        for (int c = 0; c < s.classes(); ++c) {
            if (c == true_class) continue;
            const Acc slack = totals[c] - table.region_sum(c, dep) - card;
            if (slack < worst) {
                worst = slack;
                worst_index = k;
            }
        }
    }
    r.margin = worst;
    r.limiting_index = worst_index;
    if (regions != nullptr) r.limiting_region = regions->at(worst_index);
    r.certified = r.correct && worst > Acc{0};
    return r;
}

template <class T>
auto certify_sum(const BasicScoreMap<T>& s, int true_class, const RegionSet& regions,
                 const NetGeometry& net) {
    if (regions.empty()) throw std::invalid_argument("certify_sum: empty region set");
    return certify_sum(s, true_class, dependency_regions(regions, net), &regions);
}

/// Global-margin condition: min_{c != true} sum(delta_c) > 2 * r_max. Constant in |L|.
template <class T>
auto certify_cheap(const BasicScoreMap<T>& s, int true_class, int r_max) {
    using Acc = typename score_traits<T>::accum_type;
    if (s.classes() < 2) throw std::invalid_argument("certify_cheap: need at least two classes");
    if (r_max < 0) throw std::invalid_argument("certify_cheap: negative r_max");
    const auto clean = classify(s);
    CertificationResult<Acc> r;
    r.condition = Condition::cheap;
    r.label = true_class;
    r.predicted = clean.predicted;
    r.correct = clean.predicted == true_class && !clean.tied;
    Acc worst = std::numeric_limits<Acc>::max();
    for (int c = 0; c < s.classes(); ++c) {
        if (c == true_class) continue;
        worst = std::min(worst, clean.scores[true_class] - clean.scores[c]);
    }
    r.margin = worst - static_cast<Acc>(2 * r_max);
    r.certified = r.correct && r.margin > Acc{0};
    return r;
}

/// A monotonically increasing map from binary score maps to class scores.
struct Aggregator {
    std::string name;
    std::function<std::vector<double>(const ScoreMap&)> fn;

    std::vector<double> operator()(const ScoreMap& s) const { return fn(s); }
};

/// Wraps `fn` after a randomized monotonicity probe; throws if a violation is found.
inline Aggregator register_aggregator(std::string name,
                                      std::function<std::vector<double>(const ScoreMap&)> fn,
                                      std::uint64_t seed = 0, int probes = 200) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dim(1, 5);
    std::bernoulli_distribution coin(0.5);
    for (int p = 0; p < probes; ++p) {
        const int rows = dim(rng);
        const int cols = dim(rng);
        const int classes = dim(rng) + 1;
        std::vector<std::uint8_t> low(static_cast<std::size_t>(rows) * cols * classes);
        for (auto& v : low) v = coin(rng) ? 1 : 0;
        std::vector<std::uint8_t> high = low;
        for (auto& v : high) {
            if (coin(rng)) v = 1;
        }
        const auto g_low = fn(ScoreMap(rows, cols, classes, low));
        const auto g_high = fn(ScoreMap(rows, cols, classes, high));
        if (g_low.size() != static_cast<std::size_t>(classes) || g_high.size() != g_low.size()) {
            throw std::invalid_argument("aggregator '" + name + "' returns wrong class count");
        }
        for (int c = 0; c < classes; ++c) {
            if (g_high[c] < g_low[c]) {
                throw std::invalid_argument("aggregator '" + name +
                                            "' is not monotonically increasing");
            }
        }
    }
    return Aggregator{std::move(name), std::move(fn)};
}

inline Aggregator sum_aggregator() {
    static const Aggregator g = register_aggregator("sum", [](const ScoreMap& s) {
        const auto scores = classify(s).scores;
        return std::vector<double>(scores.begin(), scores.end());
    });
    return g;
}

using IndexSet = std::vector<std::pair<int, int>>;

inline IndexSet to_index_set(const DependencyRegion& r) {
    IndexSet out;
    for (int i = r.row_begin; i < r.row_end; ++i) {
        for (int j = r.col_begin; j < r.col_end; ++j) out.emplace_back(i, j);
    }
    return out;
}

/// Reference path: materializes the worst-case map for each dependency set and
/// checks strict dominance of the true class under `g`. Accepts arbitrary
/// (non-rectangular) index sets.
inline CertificationResult<double> certify_generic(const ScoreMap& s, int true_class,
                                                   const std::vector<IndexSet>& dependencies,
                                                   const Aggregator& g) {
    if (dependencies.empty()) throw std::invalid_argument("certify_generic: empty region set");
    if (true_class < 0 || true_class >= s.classes()) {
        throw std::invalid_argument("certify_generic: class out of range");
    }
    CertificationResult<double> r;
    r.condition = Condition::generic;
    r.label = true_class;
    const auto clean = g(s);
    r.predicted = static_cast<int>(std::max_element(clean.begin(), clean.end()) - clean.begin());
    r.correct = true;
    for (int c = 0; c < s.classes(); ++c) {
        if (c != true_class && clean[c] >= clean[true_class]) r.correct = false;
    }

    double worst = std::numeric_limits<double>::infinity();
    std::size_t worst_index = 0;
    for (std::size_t k = 0; k < dependencies.size(); ++k) {
        ScoreMap wc = s;
        for (const auto& [i, j] : dependencies[k]) {
            for (int c = 0; c < s.classes(); ++c) wc.set(i, j, c, c == true_class ? 0 : 1);
        }
        const auto scores = g(wc);
        for (int c = 0; c < s.classes(); ++c) {
            if (c == true_class) continue;
            const double slack = scores[true_class] - scores[c];
            if (slack < worst) {
                worst = slack;
                worst_index = k;
            }
        }
    }
    r.margin = worst;
    r.limiting_index = worst_index;
    r.certified = r.correct && worst > 0.0;
    return r;
}

inline CertificationResult<double> certify_generic(const ScoreMap& s, int true_class,
                                                   const RegionSet& regions,
                                                   const NetGeometry& net, const Aggregator& g) {
    if (regions.empty()) throw std::invalid_argument("certify_generic: empty region set");
    std::vector<IndexSet> sets;
    sets.reserve(regions.size());
    for (const auto& l : regions) sets.push_back(to_index_set(dependency_region(l, net)));
    auto r = certify_generic(s, true_class, sets, g);
    r.limiting_region = regions.at(*r.limiting_index);
    return r;
}

}  // namespace patchcert
