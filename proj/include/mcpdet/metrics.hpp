#pragma once

// Confusion-matrix regimes over conformalized results, derived rates, ROC
// area, average precision, and a two-proportion significance test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mcpdet/core.hpp"
#include "mcpdet/inference.hpp"

namespace mcpdet {

enum class Regime { MatrixA, MatrixB, MatrixC, ExtClassification, ExtExactClassification };

inline constexpr Regime kAllRegimes[] = {Regime::MatrixA, Regime::MatrixB, Regime::MatrixC,
                                         Regime::ExtClassification, Regime::ExtExactClassification};

constexpr std::string_view to_string(Regime r) noexcept {
    switch (r) {
    case Regime::MatrixA: return "matrix_a";
    case Regime::MatrixB: return "matrix_b";
    case Regime::MatrixC: return "matrix_c";
    case Regime::ExtClassification: return "ext_classification";
    case Regime::ExtExactClassification: return "ext_exact_classification";
    }
    return "unknown";
}

inline Regime parse_regime(std::string_view s) {
    for (Regime r : kAllRegimes) {
        if (to_string(r) == s) {
            return r;
        }
    }
    if (s == "A" || s == "a") return Regime::MatrixA;
    if (s == "B" || s == "b") return Regime::MatrixB;
    if (s == "C" || s == "c") return Regime::MatrixC;
    throw Error(ErrorKind::InvalidRegime, "unknown regime '" + std::string(s) + "'");
}

enum class CountingUnit { ClassInstance, SliceClass, Slice };

// How a presence assertion is matched against ground truth.
//
//   ClassInstance  one ground-truth label per (slice, class) is a positive
//                  instance; every asserting cluster entry that matches no
//                  truth is its own false positive. With exact_set_required
//                  the unit is the asserting cluster instead.
//   SliceClass     one decision per (slice, class).
//   Slice          one decision per slice.
struct MatchSpec {
    bool match_iou_required = true;
    bool class_must_match = true;
    bool exact_set_required = false;
    CountingUnit counting_unit = CountingUnit::ClassInstance;
    // Localization IoU; the run's clustering IoU threshold when unset.
    std::optional<double> match_iou;

    static MatchSpec for_regime(Regime r) {
        switch (r) {
        case Regime::MatrixA: return {true, true, false, CountingUnit::ClassInstance, std::nullopt};
        case Regime::MatrixB: return {false, true, false, CountingUnit::SliceClass, std::nullopt};
        case Regime::MatrixC: return {true, true, true, CountingUnit::ClassInstance, std::nullopt};
        case Regime::ExtClassification: return {false, true, false, CountingUnit::SliceClass, std::nullopt};
        case Regime::ExtExactClassification: return {false, true, true, CountingUnit::Slice, std::nullopt};
        }
        throw Error(ErrorKind::InvalidRegime, "unknown regime");
    }

    bool defines_tn() const noexcept { return !exact_set_required || counting_unit == CountingUnit::Slice; }
    bool defines_fn() const noexcept { return !exact_set_required; }
};

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::optional<std::uint64_t> tn;
    std::optional<std::uint64_t> fn;

    static ConfusionCounts zero_for(const MatchSpec& spec) {
        ConfusionCounts c;
        if (spec.defines_tn()) c.tn = 0;
        if (spec.defines_fn()) c.fn = 0;
        return c;
    }

    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        tn = (tn && o.tn) ? std::optional(*tn + *o.tn) : std::nullopt;
        fn = (fn && o.fn) ? std::optional(*fn + *o.fn) : std::nullopt;
        return *this;
    }

    friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) noexcept { return a += b; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct DerivedMetrics {
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> ppv;
    std::optional<double> npv;
    std::optional<double> f1;

    friend bool operator==(const DerivedMetrics&, const DerivedMetrics&) = default;
};

namespace detail {
inline std::optional<double> ratio(std::uint64_t num, std::uint64_t den) noexcept {
    if (den == 0) {
        return std::nullopt;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}
} // namespace detail

// Rates with a zero or undefined denominator are left absent.
inline DerivedMetrics derive(const ConfusionCounts& c) noexcept {
    DerivedMetrics m;
    m.ppv = detail::ratio(c.tp, c.tp + c.fp);
    if (c.fn) {
        m.sensitivity = detail::ratio(c.tp, c.tp + *c.fn);
        m.f1 = detail::ratio(2 * c.tp, 2 * c.tp + c.fp + *c.fn);
    }
    if (c.tn) {
        m.specificity = detail::ratio(*c.tn, *c.tn + c.fp);
    }
    if (c.tn && c.fn) {
        m.npv = detail::ratio(*c.tn, *c.tn + *c.fn);
    }
    return m;
}

struct EvaluationReport {
    Regime regime = Regime::MatrixA;
    Thresholds thresholds;
    ConfusionCounts counts;
    DerivedMetrics metrics;

    friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

namespace detail {

// Ground truth indexed by class; throws unless every class appears exactly once.
inline std::vector<const GroundTruthLabel*> index_truth(std::span<const GroundTruthLabel> truth,
                                                        std::size_t class_count) {
    std::vector<const GroundTruthLabel*> by_class(class_count, nullptr);
    for (const auto& g : truth) {
        if (g.label.index >= class_count) {
            throw Error(ErrorKind::EvaluationInput, "ground-truth class outside alphabet");
        }
        if (by_class[g.label.index]) {
            throw Error(ErrorKind::EvaluationInput, "duplicate ground-truth label for one class");
        }
        by_class[g.label.index] = &g;
    }
    for (std::size_t c = 0; c < class_count; ++c) {
        if (!by_class[c]) {
            throw Error(ErrorKind::EvaluationInput,
                        "ground truth does not cover class index " + std::to_string(c));
        }
    }
    return by_class;
}

inline bool truth_present(const std::vector<const GroundTruthLabel*>& truth, std::size_t c) noexcept {
    return truth[c]->polarity == Polarity::Present;
}

inline const Box& entry_box(const Cluster& cl, ClassLabel label) noexcept {
    const auto& m = cl.members[label.index];
    return m ? m->box : cl.delimiter.box;
}

inline bool localized_to(const Box& where, const GroundTruthLabel& g, double match_iou) noexcept {
    return std::any_of(g.boxes.begin(), g.boxes.end(), [&](const Box& b) { return iou(where, b) >= match_iou; });
}

// Truth class credited for a (c, Present) entry of `cl`, if any.
inline std::optional<std::size_t> match_entry(const Cluster& cl, ClassLabel c,
                                              const std::vector<const GroundTruthLabel*>& truth,
                                              const MatchSpec& spec, double match_iou) {
    const Box& where = entry_box(cl, c);
    auto ok = [&](std::size_t g) {
        if (!truth_present(truth, g)) {
            return false;
        }
        return !spec.match_iou_required || localized_to(where, *truth[g], match_iou);
    };
    if (ok(c.index)) {
        return c.index;
    }
    if (!spec.class_must_match) {
        for (std::size_t g = 0; g < truth.size(); ++g) {
            if (g != c.index && ok(g)) {
                return g;
            }
        }
    }
    return std::nullopt;
}

inline std::vector<std::size_t> presence_classes(const Cluster& cl) {
    std::vector<std::size_t> out;
    for (const auto& e : cl.prediction_set) {
        if (e.polarity == Polarity::Present) {
            out.push_back(e.label.index);
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

} // namespace detail

inline ConfusionCounts score_sample(const SampleResult& result, std::span<const GroundTruthLabel> truth_labels,
                                    const MatchSpec& spec, const Alphabet& alphabet) {
    const std::size_t k = alphabet.size();
    const auto truth = detail::index_truth(truth_labels, k);
    const double match_iou = spec.match_iou.value_or(result.thresholds.iou);
    for (const auto& cl : result.clusters) {
        if (cl.members.size() != k) {
            throw Error(ErrorKind::EvaluationInput, "result cluster class count does not match the alphabet");
        }
    }

    ConfusionCounts counts = ConfusionCounts::zero_for(spec);

    if (spec.exact_set_required) {
        if (spec.counting_unit == CountingUnit::ClassInstance) {
            for (const auto& cl : result.clusters) {
                const auto present = detail::presence_classes(cl);
                if (present.empty()) {
                    continue;
                }
                bool exact = false;
                if (present.size() == 1) {
                    const ClassLabel c{present.front()};
                    const auto hit = detail::match_entry(cl, c, truth, spec, match_iou);
                    exact = hit && !cl.asserts(c, Polarity::Absent);
                    // No other truth class may sit at the cluster location.
                    for (std::size_t g = 0; exact && g < k; ++g) {
                        if (g == *hit || !detail::truth_present(truth, g)) {
                            continue;
                        }
                        if (!spec.match_iou_required ||
                            detail::localized_to(cl.delimiter.box, *truth[g], match_iou)) {
                            exact = false;
                        }
                    }
                }
                (exact ? counts.tp : counts.fp) += 1;
            }
            return counts;
        }
        if (spec.counting_unit == CountingUnit::Slice) {
            std::vector<bool> asserted(k, false);
            bool contradictory = false;
            for (const auto& cl : result.clusters) {
                for (std::size_t c : detail::presence_classes(cl)) {
                    asserted[c] = true;
                    if (cl.asserts(ClassLabel{c}, Polarity::Absent)) {
                        contradictory = true;
                    }
                    if (spec.match_iou_required && !detail::match_entry(cl, ClassLabel{c}, truth, spec, match_iou)) {
                        contradictory = true;
                    }
                }
            }
            bool any_asserted = false;
            bool any_truth = false;
            bool equal = true;
            for (std::size_t c = 0; c < k; ++c) {
                any_asserted = any_asserted || asserted[c];
                any_truth = any_truth || detail::truth_present(truth, c);
                equal = equal && asserted[c] == detail::truth_present(truth, c);
            }
            if (any_asserted) {
                (equal && !contradictory ? counts.tp : counts.fp) += 1;
            } else if (!any_truth) {
                *counts.tn += 1;
            }
            return counts;
        }
        throw Error(ErrorKind::InvalidRegime, "exact-set matching is defined per cluster or per slice");
    }

    // hit[g]: truth class g credited by at least one entry.
    // unmatched[c]: number of (c, Present) entries credited to no truth class.
    std::vector<bool> hit(k, false);
    std::vector<bool> asserted(k, false);
    std::vector<std::uint64_t> unmatched(k, 0);
    for (const auto& cl : result.clusters) {
        for (std::size_t c : detail::presence_classes(cl)) {
            asserted[c] = true;
            if (auto g = detail::match_entry(cl, ClassLabel{c}, truth, spec, match_iou)) {
                hit[*g] = true;
            } else {
                ++unmatched[c];
            }
        }
    }

    switch (spec.counting_unit) {
    case CountingUnit::ClassInstance:
        for (std::size_t c = 0; c < k; ++c) {
            counts.fp += unmatched[c];
            if (detail::truth_present(truth, c)) {
                (hit[c] ? counts.tp : *counts.fn) += 1;
            } else if (!asserted[c]) {
                *counts.tn += 1;
            }
        }
        break;
    case CountingUnit::SliceClass:
        for (std::size_t c = 0; c < k; ++c) {
            const bool positive = detail::truth_present(truth, c);
            if (positive) {
                (hit[c] ? counts.tp : *counts.fn) += 1;
            }
            if (asserted[c] && unmatched[c] > 0 && !(positive && hit[c])) {
                counts.fp += 1;
            } else if (!positive && !asserted[c]) {
                *counts.tn += 1;
            }
        }
        break;
    case CountingUnit::Slice: {
        bool any_truth = false;
        bool any_hit = false;
        bool any_asserted = false;
        for (std::size_t c = 0; c < k; ++c) {
            any_truth = any_truth || detail::truth_present(truth, c);
            any_hit = any_hit || hit[c];
            any_asserted = any_asserted || asserted[c];
        }
        if (any_truth) {
            (any_hit ? counts.tp : *counts.fn) += 1;
        }
        if (any_asserted && !any_hit) {
            counts.fp += 1;
        } else if (!any_truth && !any_asserted) {
            *counts.tn += 1;
        }
        break;
    }
    }
    return counts;
}

// Aggregates per-sample counts; results and truths are aligned by position.
inline EvaluationReport evaluate(std::span<const SampleResult> results,
                                 std::span<const std::vector<GroundTruthLabel>> truths, Regime regime,
                                 const Alphabet& alphabet, std::optional<MatchSpec> spec_override = std::nullopt) {
    if (results.size() != truths.size()) {
        throw Error(ErrorKind::EvaluationInput, "results and ground truth differ in length");
    }
    const MatchSpec spec = spec_override.value_or(MatchSpec::for_regime(regime));
    EvaluationReport report;
    report.regime = regime;
    report.counts = ConfusionCounts::zero_for(spec);
    if (!results.empty()) {
        report.thresholds = results.front().thresholds;
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!(results[i].thresholds == report.thresholds)) {
            throw Error(ErrorKind::EvaluationInput, "results were produced at different thresholds");
        }
        report.counts += score_sample(results[i], truths[i], spec, alphabet);
    }
    report.metrics = derive(report.counts);
    return report;
}

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct AucResult {
    double area = 0.5;
    // Set when no point beyond the forced (0,0) and (1,1) endpoints was supplied.
    bool degenerate = false;
};

// Trapezoidal area under the ROC polyline after adding the (0,0) and (1,1)
// endpoints and keeping the highest TPR at each distinct FPR.
inline AucResult auroc(std::span<const RocPoint> points) {
    std::vector<RocPoint> pts(points.begin(), points.end());
    for (const auto& p : pts) {
        if (!(p.fpr >= 0.0 && p.fpr <= 1.0 && p.tpr >= 0.0 && p.tpr <= 1.0)) {
            throw Error(ErrorKind::InvalidInput, "ROC points must lie in the unit square");
        }
    }
    pts.push_back({0.0, 0.0});
    pts.push_back({1.0, 1.0});
    std::sort(pts.begin(), pts.end(), [](const RocPoint& a, const RocPoint& b) {
        return a.fpr < b.fpr || (a.fpr == b.fpr && a.tpr > b.tpr);
    });
    std::vector<RocPoint> curve;
    for (const auto& p : pts) {
        if (curve.empty() || curve.back().fpr != p.fpr) {
            curve.push_back(p);
        }
    }
    AucResult r;
    r.degenerate = curve.size() <= 2;
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
    }
    r.area = area;
    return r;
}

struct AveragePrecision {
    std::vector<std::optional<double>> per_class; // absent for classes without ground truth
    std::optional<double> mean;
};

// Ranks every asserted class-c member box by confidence across the dataset,
// greedily matches each to the best still-unmatched ground-truth box of its
// sample at IoU >= match_iou, and integrates the all-points interpolated
// precision-recall curve.
inline AveragePrecision mean_average_precision(std::span<const SampleResult> results,
                                               std::span<const std::vector<GroundTruthLabel>> truths,
                                               double match_iou, const Alphabet& alphabet) {
    if (results.size() != truths.size()) {
        throw Error(ErrorKind::EvaluationInput, "results and ground truth differ in length");
    }
    if (!(match_iou >= 0.0 && match_iou <= 1.0)) {
        throw Error(ErrorKind::InvalidInput, "match IoU must lie in [0,1]");
    }
    const std::size_t k = alphabet.size();
    AveragePrecision out;
    out.per_class.resize(k);

    struct Prediction {
        double confidence;
        std::size_t sample;
        Box box;
    };

    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<std::vector<Box>> gt(results.size());
        std::vector<std::vector<bool>> used(results.size());
        std::size_t n_gt = 0;
        std::vector<Prediction> preds;
        for (std::size_t i = 0; i < results.size(); ++i) {
            for (const auto& g : truths[i]) {
                if (g.label.index == c && g.polarity == Polarity::Present) {
                    gt[i].insert(gt[i].end(), g.boxes.begin(), g.boxes.end());
                }
            }
            used[i].assign(gt[i].size(), false);
            n_gt += gt[i].size();
            for (const auto& cl : results[i].clusters) {
                if (c < cl.members.size() && cl.members[c] && cl.asserts(ClassLabel{c}, Polarity::Present)) {
                    preds.push_back({cl.members[c]->confidence, i, cl.members[c]->box});
                }
            }
        }
        if (n_gt == 0) {
            continue;
        }
        std::stable_sort(preds.begin(), preds.end(),
                         [](const Prediction& a, const Prediction& b) { return a.confidence > b.confidence; });

        std::vector<double> precision(preds.size());
        std::vector<bool> is_tp(preds.size(), false);
        std::size_t tp = 0;
        for (std::size_t r = 0; r < preds.size(); ++r) {
            const auto& p = preds[r];
            double best = -1.0;
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < gt[p.sample].size(); ++j) {
                if (used[p.sample][j]) {
                    continue;
                }
                const double v = iou(p.box, gt[p.sample][j]);
                if (v > best) {
                    best = v;
                    best_j = j;
                }
            }
            if (best >= match_iou && best >= 0.0) {
                used[p.sample][best_j] = true;
                is_tp[r] = true;
                ++tp;
            }
            precision[r] = static_cast<double>(tp) / static_cast<double>(r + 1);
        }
        for (std::size_t r = preds.size(); r-- > 1;) {
            precision[r - 1] = std::max(precision[r - 1], precision[r]);
        }
        double precision_sum = 0.0;
        for (std::size_t r = 0; r < preds.size(); ++r) {
            if (is_tp[r]) {
                precision_sum += precision[r];
            }
        }
        const double ap = precision_sum / static_cast<double>(n_gt);
        out.per_class[c] = ap;
        total += ap;
        ++counted;
    }
    if (counted > 0) {
        out.mean = total / static_cast<double>(counted);
    }
    return out;
}

// Two-sided pooled two-proportion z-test.
inline double two_proportion_test(std::uint64_t k1, std::uint64_t n1, std::uint64_t k2, std::uint64_t n2) {
    if (n1 == 0 || n2 == 0 || k1 > n1 || k2 > n2) {
        throw Error(ErrorKind::InvalidInput, "two-proportion test needs 0 <= k <= n and n >= 1");
    }
    const double p1 = static_cast<double>(k1) / static_cast<double>(n1);
    const double p2 = static_cast<double>(k2) / static_cast<double>(n2);
    const double pooled = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
    const double var = pooled * (1.0 - pooled) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2));
    if (!(var > 0.0)) {
        return p1 == p2 ? 1.0 : 0.0;
    }
    const double z = (p1 - p2) / std::sqrt(var);
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

// Agreement between the challenging flag and an external notion of
// challenging samples (reader disagreement or simulator ground truth).
struct FlagAgreement {
    std::size_t samples = 0;
    std::size_t truly_challenging = 0;
    std::size_t flagged_challenging = 0; // flagged among truly challenging
    std::size_t false_flags = 0;         // flagged among the rest

    double accuracy() const noexcept {
        if (samples == 0) return 0.0;
        const auto correct = flagged_challenging + (samples - truly_challenging - false_flags);
        return static_cast<double>(correct) / static_cast<double>(samples);
    }
    std::optional<double> identification_rate() const noexcept {
        return detail::ratio(flagged_challenging, truly_challenging);
    }
    std::optional<double> false_flag_rate() const noexcept {
        return detail::ratio(false_flags, samples - truly_challenging);
    }
};

inline FlagAgreement flag_agreement(std::span<const SampleResult> results, const std::vector<bool>& truly_challenging) {
    if (results.size() != truly_challenging.size()) {
        throw Error(ErrorKind::EvaluationInput, "results and challenging labels differ in length");
    }
    FlagAgreement a;
    a.samples = results.size();
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (truly_challenging[i]) {
            ++a.truly_challenging;
            if (results[i].challenging) ++a.flagged_challenging;
        } else if (results[i].challenging) {
            ++a.false_flags;
        }
    }
    return a;
}

} // namespace mcpdet
