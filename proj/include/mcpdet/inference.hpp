#pragma once

// Detection clustering with IoU thresholding and per-class suppression,
// conformalized prediction sets per cluster, and the challenging-case flag.
//
// Pipeline for one sample:
//   1. take the most confident box of each class (seeds);
//   2. visit seeds by descending confidence (ties by class order). A seed that
//      overlaps no accepted delimiter at >= the IoU threshold becomes a new
//      delimiter; otherwise it joins the first cluster it overlaps;
//   3. every unselected detection joins the first cluster whose delimiter it
//      overlaps at >= the threshold;
//   4. each cluster keeps its delimiter plus the most confident box of every
//      other class;
//   5. each cluster is scored against all 2K Mondrian groups.

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcpdet/calibration.hpp"
#include "mcpdet/core.hpp"

namespace mcpdet {

struct PredictionSetEntry {
    ClassLabel label;
    Polarity polarity = Polarity::Present;
    double score = 0.0;
    double source_confidence = 0.0;

    friend bool operator==(const PredictionSetEntry&, const PredictionSetEntry&) = default;
};

struct Cluster {
    Detection delimiter;
    std::vector<std::optional<Detection>> members; // indexed by class
    std::vector<PredictionSetEntry> prediction_set;

    bool asserts(ClassLabel label, Polarity polarity) const noexcept {
        return std::any_of(prediction_set.begin(), prediction_set.end(), [&](const PredictionSetEntry& e) {
            return e.label == label && e.polarity == polarity;
        });
    }

    std::size_t member_count() const noexcept {
        return static_cast<std::size_t>(
            std::count_if(members.begin(), members.end(), [](const auto& m) { return m.has_value(); }));
    }

    friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct Thresholds {
    double iou = 0.5;
    double conformal = 0.5;

    friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

struct SampleResult {
    std::string slice_id;
    std::vector<Cluster> clusters;
    bool challenging = false;
    Thresholds thresholds;

    friend bool operator==(const SampleResult&, const SampleResult&) = default;
};

struct InferenceOptions {
    // Also flag a sample when distinct clusters assert presence of different classes.
    bool cross_cluster_presence = false;
    std::size_t max_detections = kDefaultMaxDetections;
};

inline void validate_threshold(double t, const char* what) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw Error(ErrorKind::InvalidInput, std::string(what) + " threshold must lie in [0,1]");
    }
}

inline std::vector<Cluster> build_clusters(std::span<const Detection> detections, double iou_threshold,
                                           std::size_t class_count,
                                           std::size_t max_detections = kDefaultMaxDetections) {
    validate_threshold(iou_threshold, "IoU");
    if (detections.size() > max_detections) {
        throw Error(ErrorKind::InvalidInput, "too many detections for one sample: " +
                                                 std::to_string(detections.size()));
    }
    const auto seeds = top_index_per_class(detections, class_count);

    std::vector<std::size_t> order;
    for (const auto& s : seeds) {
        if (s) {
            order.push_back(*s);
        }
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].confidence > detections[b].confidence;
    });

    struct Pending {
        std::size_t delimiter;
        std::vector<std::size_t> members;
    };
    std::vector<Pending> pending;
    std::vector<bool> selected(detections.size(), false);

    for (std::size_t s : order) {
        selected[s] = true;
        auto host = std::find_if(pending.begin(), pending.end(), [&](const Pending& p) {
            return iou(detections[s].box, detections[p.delimiter].box) >= iou_threshold;
        });
        if (host == pending.end()) {
            pending.push_back({s, {}});
        } else {
            host->members.push_back(s);
        }
    }

    for (auto& p : pending) {
        const Box& anchor = detections[p.delimiter].box;
        for (std::size_t i = 0; i < detections.size(); ++i) {
            if (!selected[i] && iou(detections[i].box, anchor) >= iou_threshold) {
                selected[i] = true;
                p.members.push_back(i);
            }
        }
    }

    std::vector<Cluster> clusters;
    clusters.reserve(pending.size());
    for (const auto& p : pending) {
        const auto delim_class = detections[p.delimiter].label.index;
        std::vector<std::optional<std::size_t>> slot(class_count);
        slot[delim_class] = p.delimiter;
        for (std::size_t m : p.members) {
            const auto c = detections[m].label.index;
            if (c == delim_class) {
                continue;
            }
            if (!slot[c] || detections[m].confidence > detections[*slot[c]].confidence ||
                (detections[m].confidence == detections[*slot[c]].confidence && m < *slot[c])) {
                slot[c] = m;
            }
        }
        Cluster cl;
        cl.delimiter = detections[p.delimiter];
        cl.members.resize(class_count);
        for (std::size_t c = 0; c < class_count; ++c) {
            if (slot[c]) {
                cl.members[c] = detections[*slot[c]];
            }
        }
        clusters.push_back(std::move(cl));
    }
    return clusters;
}

// A class without a member in the cluster is scored at confidence 0.
// Inclusion requires a score strictly above the threshold.
inline Cluster conformalize(Cluster cluster, const CalibrationModel& model, double conformal_threshold) {
    validate_threshold(conformal_threshold, "conformal");
    const std::size_t k = model.alphabet().size();
    if (cluster.members.size() != k) {
        throw Error(ErrorKind::MissingGroup, "cluster class count does not match the model alphabet");
    }
    cluster.prediction_set.clear();
    for (std::size_t c = 0; c < k; ++c) {
        const ClassLabel label{c};
        const double s = cluster.members[c] ? cluster.members[c]->confidence : 0.0;
        const double present = conformal_score(model, label, Polarity::Present, s);
        const double absent = conformal_score(model, label, Polarity::Absent, 1.0 - s);
        if (present > conformal_threshold) {
            cluster.prediction_set.push_back({label, Polarity::Present, present, s});
        }
        if (absent > conformal_threshold) {
            cluster.prediction_set.push_back({label, Polarity::Absent, absent, s});
        }
    }
    return cluster;
}

inline bool cluster_is_contradictory(const Cluster& cluster) noexcept {
    std::size_t presences = 0;
    for (const auto& e : cluster.prediction_set) {
        if (e.polarity != Polarity::Present) {
            continue;
        }
        ++presences;
        if (cluster.asserts(e.label, Polarity::Absent)) {
            return true;
        }
    }
    return presences > 1;
}

inline bool flag_challenging(const SampleResult& result, bool cross_cluster_presence = false) {
    if (std::any_of(result.clusters.begin(), result.clusters.end(), cluster_is_contradictory)) {
        return true;
    }
    if (!cross_cluster_presence) {
        return false;
    }
    std::optional<ClassLabel> first;
    for (const auto& cl : result.clusters) {
        for (const auto& e : cl.prediction_set) {
            if (e.polarity != Polarity::Present) {
                continue;
            }
            if (!first) {
                first = e.label;
            } else if (*first != e.label) {
                return true;
            }
        }
    }
    return false;
}

inline SampleResult infer(const Sample& sample, const CalibrationModel& model, double iou_threshold,
                          double conformal_threshold, const InferenceOptions& options = {}) {
    validate_threshold(conformal_threshold, "conformal");
    validate(sample, model.alphabet(), options.max_detections);
    SampleResult result;
    result.slice_id = sample.slice_id;
    result.thresholds = {iou_threshold, conformal_threshold};
    auto clusters =
        build_clusters(sample.detections, iou_threshold, model.alphabet().size(), options.max_detections);
    result.clusters.reserve(clusters.size());
    for (auto& cl : clusters) {
        result.clusters.push_back(conformalize(std::move(cl), model, conformal_threshold));
    }
    result.challenging = flag_challenging(result, options.cross_cluster_presence);
    return result;
}

} // namespace mcpdet
