#pragma once

// Mondrian calibration: one sorted group of heuristic-uncertainty values per
// (class, polarity) pair, and rank-based conformal scores against them.

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "mcpdet/core.hpp"

namespace mcpdet {

inline constexpr int kModelFormatVersion = 1;

struct MondrianGroup {
    ClassLabel label;
    Polarity polarity = Polarity::Present;
    std::vector<double> values; // ascending

    friend bool operator==(const MondrianGroup&, const MondrianGroup&) = default;
};

// Count of values strictly below `v` in an ascending range (left insertion point).
inline std::size_t insertion_index(std::span<const double> sorted, double v) noexcept {
    return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
}

class CalibrationModel {
public:
    CalibrationModel(Alphabet alphabet, std::vector<MondrianGroup> groups, std::string created_at,
                     int format_version = kModelFormatVersion)
        : alphabet_(std::move(alphabet)), created_at_(std::move(created_at)),
          format_version_(format_version) {
        if (format_version_ != kModelFormatVersion) {
            throw Error(ErrorKind::FormatVersion,
                        "unsupported model format_version " + std::to_string(format_version_) +
                            " (expected " + std::to_string(kModelFormatVersion) + ")");
        }
        const std::size_t k = alphabet_.size();
        if (groups.size() != 2 * k) {
            throw Error(ErrorKind::InvalidInput, "model must hold exactly two groups per class, got " +
                                                     std::to_string(groups.size()));
        }
        groups_.resize(2 * k);
        std::vector<bool> filled(2 * k, false);
        for (auto& g : groups) {
            if (!alphabet_.contains(g.label)) {
                throw Error(ErrorKind::InvalidInput, "group class outside model alphabet");
            }
            const auto slot = slot_of(g.label, g.polarity);
            if (filled[slot]) {
                throw Error(ErrorKind::InvalidInput, "duplicate group for class " + alphabet_.name(g.label));
            }
            filled[slot] = true;
            if (!std::is_sorted(g.values.begin(), g.values.end())) {
                throw Error(ErrorKind::InvalidInput, "group values for " + alphabet_.name(g.label) +
                                                         " are not sorted ascending");
            }
            for (double v : g.values) {
                if (!(v >= 0.0 && v <= 1.0)) {
                    throw Error(ErrorKind::InvalidInput, "group value outside [0,1]");
                }
            }
            groups_[slot] = std::move(g);
        }
        sample_count_ = groups_.front().values.size();
        if (sample_count_ == 0) {
            throw Error(ErrorKind::CalibrationEmpty, "model groups are empty");
        }
        for (const auto& g : groups_) {
            if (g.values.size() != sample_count_) {
                throw Error(ErrorKind::InvalidInput, "model groups differ in size");
            }
        }
    }

    const Alphabet& alphabet() const noexcept { return alphabet_; }
    std::size_t sample_count() const noexcept { return sample_count_; }
    const std::string& created_at() const noexcept { return created_at_; }
    int format_version() const noexcept { return format_version_; }

    // Class-major, Present before Absent.
    std::span<const MondrianGroup> groups() const noexcept { return groups_; }

    const MondrianGroup& group(ClassLabel label, Polarity polarity) const {
        if (!alphabet_.contains(label)) {
            throw Error(ErrorKind::MissingGroup,
                        "no calibration group for class index " + std::to_string(label.index));
        }
        return groups_[slot_of(label, polarity)];
    }

    friend bool operator==(const CalibrationModel&, const CalibrationModel&) = default;

private:
    static std::size_t slot_of(ClassLabel label, Polarity p) noexcept {
        return 2 * label.index + (p == Polarity::Absent ? 1 : 0);
    }

    Alphabet alphabet_;
    std::vector<MondrianGroup> groups_;
    std::size_t sample_count_ = 0;
    std::string created_at_;
    int format_version_ = kModelFormatVersion;
};

// A class with no detection on a calibration sample contributes confidence 0
// to its presence group and 1 to its absence group.
inline CalibrationModel calibrate(std::span<const Sample> samples, const Alphabet& alphabet,
                                  std::string created_at,
                                  std::size_t max_detections = kDefaultMaxDetections) {
    if (samples.empty()) {
        throw Error(ErrorKind::CalibrationEmpty, "calibration requires at least one sample");
    }
    const std::size_t k = alphabet.size();
    std::vector<std::vector<double>> presence(k);
    for (auto& p : presence) {
        p.reserve(samples.size());
    }
    for (const auto& s : samples) {
        validate(s, alphabet, max_detections);
        const auto top = top_index_per_class(s.detections, k);
        for (std::size_t c = 0; c < k; ++c) {
            presence[c].push_back(top[c] ? s.detections[*top[c]].confidence : 0.0);
        }
    }
    std::vector<MondrianGroup> groups;
    groups.reserve(2 * k);
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> absence(presence[c].size());
        std::transform(presence[c].begin(), presence[c].end(), absence.begin(),
                       [](double v) { return 1.0 - v; });
        std::sort(presence[c].begin(), presence[c].end());
        std::sort(absence.begin(), absence.end());
        groups.push_back({ClassLabel{c}, Polarity::Present, std::move(presence[c])});
        groups.push_back({ClassLabel{c}, Polarity::Absent, std::move(absence)});
    }
    return CalibrationModel(alphabet, std::move(groups), std::move(created_at));
}

// Left insertion index of `hnu` in the group divided by the group size.
inline double conformal_score(const CalibrationModel& model, ClassLabel label, Polarity polarity,
                              double hnu) {
    if (!(hnu >= 0.0 && hnu <= 1.0)) {
        throw Error(ErrorKind::InvalidInput, "HNU value must lie in [0,1]");
    }
    const auto& values = model.group(label, polarity).values;
    return static_cast<double>(insertion_index(values, hnu)) / static_cast<double>(values.size());
}

} // namespace mcpdet
