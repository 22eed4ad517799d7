#pragma once

// Domain types shared by every stage of the pipeline, axis-aligned box
// geometry, and Hounsfield-unit windowing.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mcpdet/error.hpp"

namespace mcpdet {

inline constexpr std::size_t kDefaultMaxDetections = 10'000;

// Index into the run's Alphabet.
struct ClassLabel {
    std::size_t index = 0;

    friend auto operator<=>(const ClassLabel&, const ClassLabel&) = default;
};

// Ordered, duplicate-free set of class names fixed for the lifetime of a run.
class Alphabet {
public:
    Alphabet() : Alphabet(std::vector<std::string>{"IPH", "IVH", "SDH", "EDH", "SAH"}) {}

    explicit Alphabet(std::vector<std::string> names) : names_(std::move(names)) {
        if (names_.empty()) {
            throw Error(ErrorKind::InvalidInput, "alphabet must not be empty");
        }
        std::unordered_set<std::string> seen;
        for (const auto& n : names_) {
            if (n.empty()) {
                throw Error(ErrorKind::InvalidInput, "alphabet contains an empty class name");
            }
            if (!seen.insert(n).second) {
                throw Error(ErrorKind::InvalidInput, "alphabet contains duplicate class '" + n + "'");
            }
        }
    }

    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

    bool contains(ClassLabel label) const noexcept { return label.index < names_.size(); }

    const std::string& name(ClassLabel label) const {
        if (!contains(label)) {
            throw Error(ErrorKind::InvalidInput,
                        "class index " + std::to_string(label.index) + " outside alphabet");
        }
        return names_[label.index];
    }

    std::optional<ClassLabel> find(std::string_view name) const noexcept {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) {
            return std::nullopt;
        }
        return ClassLabel{static_cast<std::size_t>(it - names_.begin())};
    }

    ClassLabel label(std::string_view name) const {
        if (auto l = find(name)) {
            return *l;
        }
        throw Error(ErrorKind::InvalidInput, "class '" + std::string(name) + "' is not in the alphabet");
    }

    std::vector<ClassLabel> labels() const {
        std::vector<ClassLabel> out(names_.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = ClassLabel{i};
        }
        return out;
    }

    friend bool operator==(const Alphabet&, const Alphabet&) = default;

private:
    std::vector<std::string> names_;
};

enum class Polarity : std::uint8_t { Present, Absent };

constexpr std::string_view to_string(Polarity p) noexcept {
    return p == Polarity::Present ? "present" : "absent";
}

inline Polarity parse_polarity(std::string_view s) {
    if (s == "present") return Polarity::Present;
    if (s == "absent") return Polarity::Absent;
    throw Error(ErrorKind::InvalidInput, "unknown polarity '" + std::string(s) + "'");
}

// Closed real intervals [x1,x2] x [y1,y2] in pixel space.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const noexcept { return x2 - x1; }
    double height() const noexcept { return y2 - y1; }
    double area() const noexcept { return width() * height(); }

    bool valid() const noexcept {
        return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
               x1 <= x2 && y1 <= y2;
    }

    friend bool operator==(const Box&, const Box&) = default;
};

inline void validate(const Box& b) {
    if (!b.valid()) {
        throw Error(ErrorKind::InvalidInput, "box must be finite with x1 <= x2 and y1 <= y2");
    }
}

struct Detection {
    Box box;
    ClassLabel label;
    double confidence = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruthLabel {
    ClassLabel label;
    Polarity polarity = Polarity::Absent;
    std::vector<Box> boxes;

    friend bool operator==(const GroundTruthLabel&, const GroundTruthLabel&) = default;
};

struct ReaderOpinion {
    std::string reader_id;
    std::map<ClassLabel, Polarity> labels;

    friend bool operator==(const ReaderOpinion&, const ReaderOpinion&) = default;
};

struct Sample {
    std::string slice_id;
    std::string series_id;
    std::string patient_id;
    std::vector<Detection> detections;
    std::optional<std::vector<GroundTruthLabel>> ground_truth;
    std::optional<std::vector<ReaderOpinion>> readers;
    // Top-level dataset fields this toolkit does not interpret, kept as JSON
    // text so ingestion followed by writing is lossless.
    std::map<std::string, std::string> passthrough;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct WindowSpec {
    double level = 50.0;
    double width = 80.0;
};

inline void validate(const Detection& d, const Alphabet& alphabet) {
    validate(d.box);
    if (!alphabet.contains(d.label)) {
        throw Error(ErrorKind::InvalidInput, "detection class outside alphabet");
    }
    if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) {
        throw Error(ErrorKind::InvalidInput, "detection confidence must lie in [0,1]");
    }
}

inline void validate(const Sample& s, const Alphabet& alphabet,
                     std::size_t max_detections = kDefaultMaxDetections) {
    if (s.detections.size() > max_detections) {
        throw Error(ErrorKind::InvalidInput,
                    "sample '" + s.slice_id + "' has " + std::to_string(s.detections.size()) +
                        " detections, more than the limit of " + std::to_string(max_detections));
    }
    for (const auto& d : s.detections) {
        validate(d, alphabet);
    }
    if (s.ground_truth) {
        std::vector<bool> seen(alphabet.size(), false);
        for (const auto& g : *s.ground_truth) {
            if (!alphabet.contains(g.label)) {
                throw Error(ErrorKind::InvalidInput, "ground-truth class outside alphabet");
            }
            if (seen[g.label.index]) {
                throw Error(ErrorKind::InvalidInput, "sample '" + s.slice_id +
                                                         "' has two ground-truth labels for class " +
                                                         alphabet.name(g.label));
            }
            seen[g.label.index] = true;
            if (g.polarity == Polarity::Absent && !g.boxes.empty()) {
                throw Error(ErrorKind::InvalidInput, "absent ground-truth label carries boxes");
            }
            for (const auto& b : g.boxes) {
                validate(b);
            }
        }
    }
    if (s.readers) {
        for (const auto& r : *s.readers) {
            if (r.labels.size() != alphabet.size()) {
                throw Error(ErrorKind::InvalidInput,
                            "reader '" + r.reader_id + "' does not rate every class");
            }
            for (const auto& [label, pol] : r.labels) {
                if (!alphabet.contains(label)) {
                    throw Error(ErrorKind::InvalidInput, "reader label outside alphabet");
                }
            }
        }
    }
}

inline void validate_unique_slice_ids(std::span<const Sample> samples) {
    std::unordered_set<std::string> ids;
    for (const auto& s : samples) {
        if (!ids.insert(s.slice_id).second) {
            throw Error(ErrorKind::InvalidInput, "duplicate slice_id '" + s.slice_id + "'");
        }
    }
}

// Zero when the union has zero area.
inline double iou(const Box& a, const Box& b) noexcept {
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    if (!(uni > 0.0)) {
        return 0.0;
    }
    return std::clamp(inter / uni, 0.0, 1.0);
}

// Row-major 2-D grid.
template <typename T>
struct Raster {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> values;

    Raster() = default;
    Raster(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), values(r * c, fill) {}
    Raster(std::size_t r, std::size_t c, std::vector<T> v) : rows(r), cols(c), values(std::move(v)) {
        if (values.size() != rows * cols) {
            throw Error(ErrorKind::InvalidInput, "raster value count does not match its shape");
        }
    }

    T& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    const T& at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// Linear HU window onto [0,255], rounding half up.
inline std::uint8_t window_value(double hu, const WindowSpec& spec) {
    const double lower = spec.level - spec.width / 2.0;
    const double t = std::clamp((hu - lower) / spec.width, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::floor(255.0 * t + 0.5));
}

inline Raster<std::uint8_t> window_hu(const Raster<double>& pixels, const WindowSpec& spec) {
    if (!(spec.width > 0.0) || !std::isfinite(spec.width) || !std::isfinite(spec.level)) {
        throw Error(ErrorKind::InvalidInput, "window width must be finite and strictly positive");
    }
    Raster<std::uint8_t> out(pixels.rows, pixels.cols);
    for (std::size_t i = 0; i < pixels.values.size(); ++i) {
        const double v = pixels.values[i];
        if (!std::isfinite(v)) {
            throw Error(ErrorKind::InvalidInput, "non-finite HU value at index " + std::to_string(i));
        }
        out.values[i] = window_value(v, spec);
    }
    return out;
}

// Position in `detections` of the most confident box per class; earliest wins ties.
inline std::vector<std::optional<std::size_t>> top_index_per_class(std::span<const Detection> detections,
                                                                   std::size_t class_count) {
    std::vector<std::optional<std::size_t>> best(class_count);
    for (std::size_t i = 0; i < detections.size(); ++i) {
        const auto c = detections[i].label.index;
        if (c >= class_count) {
            throw Error(ErrorKind::InvalidInput, "detection class outside alphabet");
        }
        if (!best[c] || detections[i].confidence > detections[*best[c]].confidence) {
            best[c] = i;
        }
    }
    return best;
}

inline std::vector<std::optional<Detection>> top_box_per_class(std::span<const Detection> detections,
                                                               const Alphabet& alphabet) {
    const auto idx = top_index_per_class(detections, alphabet.size());
    std::vector<std::optional<Detection>> out(idx.size());
    for (std::size_t c = 0; c < idx.size(); ++c) {
        if (idx[c]) {
            out[c] = detections[*idx[c]];
        }
    }
    return out;
}

} // namespace mcpdet
