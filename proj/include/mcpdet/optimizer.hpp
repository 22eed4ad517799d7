#pragma once

// Exhaustive search over (IoU, conformal) threshold pairs and the two
// selection rules applied to it: ROC area for regimes that define TN and FN,
// PPV for the exact-match regime.

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mcpdet/calibration.hpp"
#include "mcpdet/inference.hpp"
#include "mcpdet/metrics.hpp"

namespace mcpdet {

struct ThresholdGrid {
    std::vector<double> iou_values;
    std::vector<double> conformal_values;

    // k * step for k = 0..count-1, computed from integers so every value is
    // the double nearest its decimal representation.
    static std::vector<double> steps(int count, int step_hundredths = 5) {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(count));
        for (int k = 0; k < count; ++k) {
            out.push_back(static_cast<double>(k * step_hundredths) / 100.0);
        }
        return out;
    }

    // 0.00, 0.05, ..., 1.00 on both axes.
    static ThresholdGrid standard() { return {steps(21), steps(21)}; }

    std::size_t size() const noexcept { return iou_values.size() * conformal_values.size(); }

    void validate() const {
        auto check = [](const std::vector<double>& v, const char* axis) {
            if (v.empty()) {
                throw Error(ErrorKind::InvalidInput, std::string(axis) + " grid is empty");
            }
            for (std::size_t i = 0; i < v.size(); ++i) {
                if (!(v[i] >= 0.0 && v[i] <= 1.0)) {
                    throw Error(ErrorKind::InvalidInput, std::string(axis) + " grid value outside [0,1]");
                }
                if (i > 0 && !(v[i - 1] < v[i])) {
                    throw Error(ErrorKind::InvalidInput, std::string(axis) + " grid must be strictly ascending");
                }
            }
        };
        check(iou_values, "IoU");
        check(conformal_values, "conformal");
    }
};

struct GridCell {
    double iou_threshold = 0.0;
    double conformal_threshold = 0.0;
    std::map<Regime, EvaluationReport> reports;

    friend bool operator==(const GridCell&, const GridCell&) = default;
};

struct SweepOptions {
    InferenceOptions inference;
    // Worker threads over IoU rows; output order does not depend on it.
    unsigned threads = 1;
};

inline std::string describe_cell(double iou_threshold, double conformal_threshold) {
    return "cell (iou=" + std::to_string(iou_threshold) + ", conformal=" + std::to_string(conformal_threshold) + ")";
}

// Cells come out IoU-major, conformal-minor. Clusters depend only on the IoU
// threshold and are built once per row.
inline std::vector<GridCell> sweep(std::span<const Sample> samples, const CalibrationModel& model,
                                   const ThresholdGrid& grid, std::span<const Regime> regimes_in,
                                   const SweepOptions& options = {}) {
    grid.validate();
    std::vector<Regime> unique_regimes;
    for (Regime r : regimes_in) {
        if (std::find(unique_regimes.begin(), unique_regimes.end(), r) == unique_regimes.end()) {
            unique_regimes.push_back(r);
        }
    }
    const std::span<const Regime> regimes = unique_regimes;
    if (regimes.empty()) {
        throw Error(ErrorKind::InvalidRegime, "sweep needs at least one regime");
    }
    const Alphabet& alphabet = model.alphabet();
    for (const auto& s : samples) {
        if (!s.ground_truth) {
            throw Error(ErrorKind::EvaluationInput, "sample '" + s.slice_id + "' has no ground truth");
        }
        validate(s, alphabet, options.inference.max_detections);
    }

    const std::size_t rows = grid.iou_values.size();
    const std::size_t cols = grid.conformal_values.size();
    std::vector<GridCell> cells(rows * cols);

    auto run_row = [&](std::size_t r) {
        const double iou_t = grid.iou_values[r];
        std::vector<std::vector<Cluster>> clusters(samples.size());
        try {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                clusters[i] = build_clusters(samples[i].detections, iou_t, alphabet.size(),
                                             options.inference.max_detections);
            }
        } catch (const Error& e) {
            throw Error(e.kind(), describe_cell(iou_t, grid.conformal_values.front()) + ": " + e.what());
        }
        for (std::size_t c = 0; c < cols; ++c) {
            const double conf_t = grid.conformal_values[c];
            GridCell& cell = cells[r * cols + c];
            cell.iou_threshold = iou_t;
            cell.conformal_threshold = conf_t;
            try {
                std::vector<MatchSpec> specs;
                for (Regime reg : regimes) {
                    specs.push_back(MatchSpec::for_regime(reg));
                    cell.reports[reg].counts = ConfusionCounts::zero_for(specs.back());
                }
                for (std::size_t i = 0; i < samples.size(); ++i) {
                    SampleResult result;
                    result.slice_id = samples[i].slice_id;
                    result.thresholds = {iou_t, conf_t};
                    result.clusters.reserve(clusters[i].size());
                    for (const auto& cl : clusters[i]) {
                        result.clusters.push_back(conformalize(cl, model, conf_t));
                    }
                    result.challenging = flag_challenging(result, options.inference.cross_cluster_presence);
                    for (std::size_t g = 0; g < regimes.size(); ++g) {
                        cell.reports[regimes[g]].counts +=
                            score_sample(result, *samples[i].ground_truth, specs[g], alphabet);
                    }
                }
                for (auto& [reg, report] : cell.reports) {
                    report.regime = reg;
                    report.thresholds = {iou_t, conf_t};
                    report.metrics = derive(report.counts);
                }
            } catch (const Error& e) {
                throw Error(e.kind(), describe_cell(iou_t, conf_t) + ": " + e.what());
            }
        }
    };

    const unsigned workers = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(rows)));
    if (workers == 1) {
        for (std::size_t r = 0; r < rows; ++r) {
            run_row(r);
        }
        return cells;
    }

    std::vector<std::exception_ptr> failures(rows);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t r = w; r < rows; r += workers) {
                    try {
                        run_row(r);
                    } catch (...) {
                        failures[r] = std::current_exception();
                    }
                }
            });
        }
    }
    for (const auto& f : failures) {
        if (f) {
            std::rethrow_exception(f);
        }
    }
    return cells;
}

struct AurocSelection {
    double iou_threshold = 0.0;
    double conformal_threshold = 0.0;
    double auroc = 0.0;
    double youden = 0.0;
};

struct PpvSelection {
    double iou_threshold = 0.0;
    double conformal_threshold = 0.0;
    double ppv = 0.0;
    std::uint64_t tp = 0;
};

namespace detail {

inline constexpr double kTieTolerance = 1e-12;

inline const EvaluationReport& report_for(const GridCell& cell, Regime regime) {
    auto it = cell.reports.find(regime);
    if (it == cell.reports.end()) {
        throw Error(ErrorKind::InvalidRegime,
                    "grid cell has no report for regime " + std::string(to_string(regime)));
    }
    return it->second;
}

// Cells grouped by IoU threshold, rows ascending, each row ascending in the
// conformal threshold.
inline std::vector<std::vector<const GridCell*>> rows_of(std::span<const GridCell> cells) {
    std::map<double, std::vector<const GridCell*>> by_iou;
    for (const auto& c : cells) {
        by_iou[c.iou_threshold].push_back(&c);
    }
    std::vector<std::vector<const GridCell*>> rows;
    for (auto& [iou_t, row] : by_iou) {
        std::sort(row.begin(), row.end(), [](const GridCell* a, const GridCell* b) {
            return a->conformal_threshold < b->conformal_threshold;
        });
        rows.push_back(std::move(row));
    }
    for (const auto& row : rows) {
        if (row.size() != rows.front().size()) {
            throw Error(ErrorKind::InvalidInput, "grid cells do not form a full cartesian grid");
        }
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (row[i]->conformal_threshold != rows.front()[i]->conformal_threshold) {
                throw Error(ErrorKind::InvalidInput, "grid cells do not form a full cartesian grid");
            }
        }
    }
    return rows;
}

} // namespace detail

// ROC area picks the IoU row (each row traced over conformal thresholds);
// Youden's J picks the operating point on that row. Ties go to the smaller
// threshold.
inline AurocSelection select_by_auroc(std::span<const GridCell> cells, Regime regime) {
    const auto spec = MatchSpec::for_regime(regime);
    if (!spec.defines_tn() || !spec.defines_fn()) {
        throw Error(ErrorKind::InvalidRegime,
                    "regime " + std::string(to_string(regime)) + " does not define TN and FN");
    }
    if (cells.empty()) {
        throw Error(ErrorKind::NoSelection, "no grid cells to select from");
    }
    const auto rows = detail::rows_of(cells);

    std::optional<std::size_t> best_row;
    double best_auc = -1.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<RocPoint> pts;
        for (const GridCell* c : rows[r]) {
            const auto& m = detail::report_for(*c, regime).metrics;
            if (m.sensitivity && m.specificity) {
                pts.push_back({1.0 - *m.specificity, *m.sensitivity});
            }
        }
        if (pts.empty()) {
            continue;
        }
        const double a = auroc(pts).area;
        if (!best_row || a > best_auc + detail::kTieTolerance) {
            best_row = r;
            best_auc = a;
        }
    }
    if (!best_row) {
        throw Error(ErrorKind::NoSelection, "no grid cell defines both sensitivity and specificity");
    }

    AurocSelection sel;
    sel.auroc = best_auc;
    bool found = false;
    for (const GridCell* c : rows[*best_row]) {
        const auto& m = detail::report_for(*c, regime).metrics;
        if (!(m.sensitivity && m.specificity)) {
            continue;
        }
        const double j = *m.sensitivity + *m.specificity - 1.0;
        if (!found || j > sel.youden + detail::kTieTolerance) {
            found = true;
            sel.youden = j;
            sel.iou_threshold = c->iou_threshold;
            sel.conformal_threshold = c->conformal_threshold;
        }
    }
    return sel;
}

// Highest PPV over cells that assert anything; ties prefer more true
// positives, then the smaller thresholds.
inline PpvSelection select_by_ppv(std::span<const GridCell> cells, Regime regime = Regime::MatrixC) {
    std::vector<const GridCell*> ordered;
    for (const auto& c : cells) {
        ordered.push_back(&c);
    }
    std::sort(ordered.begin(), ordered.end(), [](const GridCell* a, const GridCell* b) {
        if (a->iou_threshold != b->iou_threshold) return a->iou_threshold < b->iou_threshold;
        return a->conformal_threshold < b->conformal_threshold;
    });
    std::optional<PpvSelection> best;
    for (const GridCell* c : ordered) {
        const auto& rep = detail::report_for(*c, regime);
        if (rep.counts.tp + rep.counts.fp == 0 || !rep.metrics.ppv) {
            continue;
        }
        const double ppv = *rep.metrics.ppv;
        const bool better = !best || ppv > best->ppv + detail::kTieTolerance ||
                            (std::abs(ppv - best->ppv) <= detail::kTieTolerance && rep.counts.tp > best->tp);
        if (better) {
            best = PpvSelection{c->iou_threshold, c->conformal_threshold, ppv, rep.counts.tp};
        }
    }
    if (!best) {
        throw Error(ErrorKind::NoSelection, "every grid cell has tp + fp = 0");
    }
    return *best;
}

} // namespace mcpdet
