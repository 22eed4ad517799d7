#pragma once

// Synthetic detector: seeded corpora with known ground truth, controllable
// confidence separation, clutter, and injected ambiguous (two-class) lesions.
// Calibration and test corpora drawn from the same config under different
// seeds are exchangeable.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mcpdet/calibration.hpp"
#include "mcpdet/core.hpp"
#include "mcpdet/inference.hpp"
#include "mcpdet/random.hpp"

namespace mcpdet {

inline constexpr double kPresentLogitMean = 2.0;
inline constexpr double kAbsentLogitMean = -2.0;
inline constexpr double kMinLesionSide = 24.0;
inline constexpr double kMaxLesionSide = 96.0;
inline constexpr double kBoxJitter = 1.0;        // px, per coordinate
inline constexpr double kAmbiguousLogitJitter = 0.1;

struct SimConfig {
    std::uint64_t seed = 0;
    std::size_t n_samples = 1000;
    double image_width = 512.0;
    double image_height = 512.0;
    Alphabet alphabet;
    // Per-class probability that a non-ambiguous sample carries a lesion of
    // that class; empty means default_priors(alphabet).
    std::vector<double> class_priors;
    double confidence_noise = 1.0; // sd of the logit-space noise
    double ambiguity_rate = 0.1;
    double clutter_rate = 0.5;
    std::size_t slices_per_patient = 24;

    static std::vector<double> default_priors(const Alphabet& alphabet) {
        if (alphabet == Alphabet{}) {
            return {0.25, 0.10, 0.20, 0.05, 0.25};
        }
        return std::vector<double>(alphabet.size(), 0.2);
    }

    std::vector<double> priors() const { return class_priors.empty() ? default_priors(alphabet) : class_priors; }

    void validate() const {
        const auto p = priors();
        if (p.size() != alphabet.size()) {
            throw Error(ErrorKind::InvalidInput, "class_priors must have one entry per class");
        }
        double sum = 0.0;
        for (double v : p) {
            if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidInput, "class priors must lie in [0,1]");
            sum += v;
        }
        if (sum <= 0.0) {
            throw Error(ErrorKind::DegenerateConfig, "every class prior is zero");
        }
        for (double r : {ambiguity_rate, clutter_rate}) {
            if (!(r >= 0.0 && r <= 1.0)) throw Error(ErrorKind::InvalidInput, "rates must lie in [0,1]");
        }
        if (ambiguity_rate > 0.0 && alphabet.size() < 2) {
            throw Error(ErrorKind::DegenerateConfig, "ambiguous samples need at least two classes");
        }
        if (n_samples < 1) throw Error(ErrorKind::InvalidInput, "n_samples must be at least 1");
        if (slices_per_patient < 1) throw Error(ErrorKind::InvalidInput, "slices_per_patient must be at least 1");
        if (!(confidence_noise >= 0.0) || !std::isfinite(confidence_noise)) {
            throw Error(ErrorKind::InvalidInput, "confidence_noise must be finite and non-negative");
        }
        if (!(image_width >= 2 * kMaxLesionSide && image_height >= 2 * kMaxLesionSide)) {
            throw Error(ErrorKind::InvalidInput, "image is too small for synthetic lesions");
        }
    }
};

struct SimCorpus {
    std::vector<Sample> samples;
    std::vector<bool> ambiguous; // generator truth, aligned with samples
};

namespace detail {

inline double sigmoid(double x) noexcept { return 1.0 / (1.0 + std::exp(-x)); }

inline Box random_box(Rng& rng, double w, double h) {
    const double bw = rng.uniform(kMinLesionSide, kMaxLesionSide);
    const double bh = rng.uniform(kMinLesionSide, kMaxLesionSide);
    const double x = rng.uniform(0.0, w - bw);
    const double y = rng.uniform(0.0, h - bh);
    return {x, y, x + bw, y + bh};
}

inline Box jitter(Rng& rng, const Box& b, double w, double h) {
    double x1 = std::clamp(b.x1 + rng.normal(0.0, kBoxJitter), 0.0, w);
    double y1 = std::clamp(b.y1 + rng.normal(0.0, kBoxJitter), 0.0, h);
    double x2 = std::clamp(b.x2 + rng.normal(0.0, kBoxJitter), 0.0, w);
    double y2 = std::clamp(b.y2 + rng.normal(0.0, kBoxJitter), 0.0, h);
    if (x1 > x2) std::swap(x1, x2);
    if (y1 > y2) std::swap(y1, y2);
    return {x1, y1, x2, y2};
}

// Lesion location disjoint from those already placed when possible.
inline Box place_lesion(Rng& rng, const std::vector<Box>& placed, double w, double h) {
    Box b = random_box(rng, w, h);
    for (int attempt = 0; attempt < 64; ++attempt) {
        const bool clear = std::none_of(placed.begin(), placed.end(), [&](const Box& o) {
            return std::min(b.x2, o.x2) > std::max(b.x1, o.x1) && std::min(b.y2, o.y2) > std::max(b.y1, o.y1);
        });
        if (clear) break;
        b = random_box(rng, w, h);
    }
    return b;
}

inline std::string padded(std::size_t v, int width) {
    std::string s = std::to_string(v);
    if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
    return s;
}

} // namespace detail

inline SimCorpus generate(const SimConfig& config) {
    config.validate();
    const auto priors = config.priors();
    const std::size_t k = config.alphabet.size();
    const double w = config.image_width;
    const double h = config.image_height;
    const double sigma = config.confidence_noise;

    Rng rng(config.seed);
    SimCorpus corpus;
    corpus.samples.reserve(config.n_samples);
    corpus.ambiguous.reserve(config.n_samples);

    const std::string stem = "sim" + std::to_string(config.seed);
    for (std::size_t i = 0; i < config.n_samples; ++i) {
        Sample s;
        const std::size_t patient = i / config.slices_per_patient;
        s.slice_id = stem + "-" + detail::padded(i, 6);
        s.patient_id = stem + "-P" + detail::padded(patient, 5);
        s.series_id = stem + "-S" + detail::padded(patient, 5);

        std::vector<GroundTruthLabel> truth(k);
        for (std::size_t c = 0; c < k; ++c) truth[c] = {ClassLabel{c}, Polarity::Absent, {}};
        std::vector<Box> placed;

        const bool ambiguous = rng.bernoulli(config.ambiguity_rate);
        std::size_t pair[2] = {0, 0};
        if (ambiguous) {
            pair[0] = rng.weighted(priors);
            std::vector<double> rest = priors;
            rest[pair[0]] = 0.0;
            if (std::all_of(rest.begin(), rest.end(), [](double v) { return v <= 0.0; })) {
                for (std::size_t c = 0; c < k; ++c) rest[c] = c == pair[0] ? 0.0 : 1.0;
            }
            pair[1] = rng.weighted(rest);
            const Box lesion = detail::place_lesion(rng, placed, w, h);
            placed.push_back(lesion);
            const double logit = rng.normal(kPresentLogitMean, sigma);
            const double logits[2] = {logit, logit + rng.normal(0.0, kAmbiguousLogitJitter)};
            for (int j = 0; j < 2; ++j) {
                s.detections.push_back(
                    {detail::jitter(rng, lesion, w, h), ClassLabel{pair[j]}, detail::sigmoid(logits[j])});
                truth[pair[j]] = {ClassLabel{pair[j]}, Polarity::Present, {lesion}};
            }
        } else {
            for (std::size_t c = 0; c < k; ++c) {
                if (!rng.bernoulli(priors[c])) continue;
                const Box lesion = detail::place_lesion(rng, placed, w, h);
                placed.push_back(lesion);
                s.detections.push_back({detail::jitter(rng, lesion, w, h), ClassLabel{c},
                                        detail::sigmoid(rng.normal(kPresentLogitMean, sigma))});
                truth[c] = {ClassLabel{c}, Polarity::Present, {lesion}};
            }
        }

        // Background response of every class without a lesion.
        for (std::size_t c = 0; c < k; ++c) {
            if (truth[c].polarity == Polarity::Present) continue;
            s.detections.push_back({detail::random_box(rng, w, h), ClassLabel{c},
                                    detail::sigmoid(rng.normal(kAbsentLogitMean, sigma))});
        }
        const unsigned clutter = rng.poisson(config.clutter_rate);
        for (unsigned j = 0; j < clutter; ++j) {
            const auto c = static_cast<std::size_t>(rng.below(k));
            s.detections.push_back({detail::random_box(rng, w, h), ClassLabel{c},
                                    detail::sigmoid(rng.normal(kAbsentLogitMean, sigma))});
        }
        rng.shuffle(s.detections);

        std::vector<ReaderOpinion> readers(3);
        for (std::size_t r = 0; r < readers.size(); ++r) {
            readers[r].reader_id = "R" + std::to_string(r + 1);
            for (std::size_t c = 0; c < k; ++c) readers[r].labels[ClassLabel{c}] = truth[c].polarity;
        }
        if (ambiguous) {
            // R1 sees both classes, R2 only the first, R3 only the second.
            readers[1].labels[ClassLabel{pair[1]}] = Polarity::Absent;
            readers[2].labels[ClassLabel{pair[0]}] = Polarity::Absent;
        }

        s.ground_truth = std::move(truth);
        s.readers = std::move(readers);
        corpus.samples.push_back(std::move(s));
        corpus.ambiguous.push_back(ambiguous);
    }
    return corpus;
}

// For each conformal threshold, the fraction of (sample, truly present class)
// pairs for which some cluster of the sample asserts (class, Present).
inline std::vector<double> coverage_probe(const SimCorpus& corpus, const CalibrationModel& model,
                                          std::span<const double> thresholds, double iou_threshold = 0.5) {
    std::vector<double> rates;
    rates.reserve(thresholds.size());
    for (double t : thresholds) {
        std::size_t positives = 0;
        std::size_t covered = 0;
        for (const auto& s : corpus.samples) {
            if (!s.ground_truth) continue;
            const auto result = infer(s, model, iou_threshold, t);
            for (const auto& g : *s.ground_truth) {
                if (g.polarity != Polarity::Present) continue;
                ++positives;
                const bool hit = std::any_of(result.clusters.begin(), result.clusters.end(), [&](const Cluster& cl) {
                    return cl.asserts(g.label, Polarity::Present);
                });
                if (hit) ++covered;
            }
        }
        rates.push_back(positives == 0 ? 0.0 : static_cast<double>(covered) / static_cast<double>(positives));
    }
    return rates;
}

} // namespace mcpdet
