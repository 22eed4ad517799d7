#pragma once

#include <string>
#include <vector>

#include "mcpdet/core.hpp"
#include "mcpdet/random.hpp"

namespace fixtures {

using mcpdet::Box;
using mcpdet::ClassLabel;
using mcpdet::Detection;

// Nine boxes, five classes, four spatial hypotheses. Class indices follow the
// default alphabet (IPH, IVH, SDH, EDH, SAH).
//
//   region A  IPH .95 (seed, delimiter)  IVH .40  IPH .30 (dropped: delimiter class)
//   region B  SDH .90 (seed, delimiter)  EDH .20
//   region C  SAH .85 (seed, delimiter)  IVH .80 (seed attached to C)
//   region D  EDH .75 (seed, delimiter)  SDH .10
inline std::vector<Detection> four_cluster_arrangement() {
    const Box a{10, 10, 60, 60}, b{200, 10, 250, 60}, c{10, 200, 60, 250}, d{200, 200, 250, 250};
    auto near = [](Box x, double dx) { return Box{x.x1 + dx, x.y1 + dx, x.x2 + dx, x.y2 + dx}; };
    return {
        {a, ClassLabel{0}, 0.95},           // 0
        {near(a, 2), ClassLabel{1}, 0.40},  // 1
        {near(a, -2), ClassLabel{0}, 0.30}, // 2
        {b, ClassLabel{2}, 0.90},           // 3
        {near(b, 3), ClassLabel{3}, 0.20},  // 4
        {c, ClassLabel{4}, 0.85},           // 5
        {near(c, 1), ClassLabel{1}, 0.80},  // 6
        {d, ClassLabel{3}, 0.75},           // 7
        {near(d, -3), ClassLabel{2}, 0.10}, // 8
    };
}

// Input indices kept per cluster after condensation; delimiter first.
inline std::vector<std::vector<std::size_t>> four_cluster_expected() { return {{0, 1}, {3, 4}, {5, 6}, {7, 8}}; }

// Corpus of `patients` patients with `slices_per_patient` slices each; class
// labels drawn independently per slice with the given priors.
inline std::vector<mcpdet::Sample> grouped_corpus(std::size_t patients, std::size_t slices_per_patient,
                                                  const std::vector<double>& priors, std::uint64_t seed,
                                                  bool vary_sizes = false) {
    mcpdet::Rng rng(seed);
    std::vector<mcpdet::Sample> out;
    for (std::size_t p = 0; p < patients; ++p) {
        const std::size_t n = vary_sizes ? 1 + static_cast<std::size_t>(rng.below(2 * slices_per_patient))
                                         : slices_per_patient;
        for (std::size_t i = 0; i < n; ++i) {
            mcpdet::Sample s;
            s.slice_id = "p" + std::to_string(p) + "-s" + std::to_string(i);
            s.patient_id = "p" + std::to_string(p);
            s.series_id = "p" + std::to_string(p) + "-ser" + std::to_string(i % 2);
            std::vector<mcpdet::GroundTruthLabel> truth;
            for (std::size_t c = 0; c < priors.size(); ++c) {
                if (rng.bernoulli(priors[c])) {
                    truth.push_back({ClassLabel{c}, mcpdet::Polarity::Present, {{0, 0, 10, 10}}});
                } else {
                    truth.push_back({ClassLabel{c}, mcpdet::Polarity::Absent, {}});
                }
            }
            s.ground_truth = std::move(truth);
            out.push_back(std::move(s));
        }
    }
    return out;
}

} // namespace fixtures
