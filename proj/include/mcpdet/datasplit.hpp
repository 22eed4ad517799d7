#pragma once

// Reader-concordance partitioning and the grouped, stratified
// training/tuning/calibration/test split.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mcpdet/core.hpp"
#include "mcpdet/random.hpp"

namespace mcpdet {

struct DefiniteEntry {
    Sample sample;
    std::map<ClassLabel, Polarity> consensus; // unanimous classes only
};

struct ChallengingEntry {
    Sample sample;
    std::vector<ClassLabel> disputed;
    std::string reason;
};

struct ExcludedEntry {
    Sample sample;
    std::string reason;
};

struct PartitionResult {
    std::vector<DefiniteEntry> definite;
    std::vector<ChallengingEntry> challenging;
    std::vector<Sample> negative;
    std::vector<ExcludedEntry> excluded;
};

inline constexpr std::string_view kReasonDisagreement = "reader-disagreement";
inline constexpr std::string_view kReasonBoxesReaderNegative = "boxes-but-reader-negative";
inline constexpr std::string_view kReasonNoBoxes = "no-boxes";

namespace detail {
inline bool has_boxes(const Sample& s) {
    if (!s.ground_truth) {
        return false;
    }
    return std::any_of(s.ground_truth->begin(), s.ground_truth->end(),
                       [](const GroundTruthLabel& g) { return !g.boxes.empty(); });
}
} // namespace detail

// Per (sample, class): unanimous readers put the class on the definite side,
// any disagreement on the challenging side. A sample can land on both.
inline PartitionResult partition(std::span<const Sample> samples, const Alphabet& alphabet) {
    PartitionResult out;
    const std::size_t k = alphabet.size();
    for (const auto& s : samples) {
        if (!s.readers || s.readers->empty()) {
            throw Error(ErrorKind::PartitionInput, "sample '" + s.slice_id + "' has no reader opinions");
        }
        std::vector<std::optional<Polarity>> unanimous(k);
        std::vector<bool> disputed(k, false);
        bool any_present_vote = false;
        for (std::size_t c = 0; c < k; ++c) {
            for (const auto& r : *s.readers) {
                auto it = r.labels.find(ClassLabel{c});
                if (it == r.labels.end()) {
                    throw Error(ErrorKind::PartitionInput,
                                "reader '" + r.reader_id + "' did not rate class " + alphabet.name(ClassLabel{c}));
                }
                any_present_vote = any_present_vote || it->second == Polarity::Present;
                if (!unanimous[c] && !disputed[c]) {
                    unanimous[c] = it->second;
                } else if (unanimous[c] && *unanimous[c] != it->second) {
                    unanimous[c].reset();
                    disputed[c] = true;
                }
            }
        }

        const bool boxes = detail::has_boxes(s);
        if (!any_present_vote) {
            if (boxes) {
                out.challenging.push_back({s, alphabet.labels(), std::string(kReasonBoxesReaderNegative)});
            } else {
                out.negative.push_back(s);
            }
            continue;
        }
        if (!boxes) {
            out.excluded.push_back({s, std::string(kReasonNoBoxes)});
            continue;
        }

        DefiniteEntry def{s, {}};
        ChallengingEntry chal{s, {}, std::string(kReasonDisagreement)};
        for (std::size_t c = 0; c < k; ++c) {
            if (unanimous[c]) {
                def.consensus.emplace(ClassLabel{c}, *unanimous[c]);
            } else {
                chal.disputed.push_back(ClassLabel{c});
            }
        }
        if (!def.consensus.empty()) {
            out.definite.push_back(std::move(def));
        }
        if (!chal.disputed.empty()) {
            out.challenging.push_back(std::move(chal));
        }
    }
    return out;
}

enum class Subset { Training, Tuning, Calibration, Test };

inline constexpr std::array<Subset, 4> kSubsets = {Subset::Training, Subset::Tuning, Subset::Calibration,
                                                   Subset::Test};

constexpr std::string_view to_string(Subset s) noexcept {
    switch (s) {
    case Subset::Training: return "training";
    case Subset::Tuning: return "tuning";
    case Subset::Calibration: return "calibration";
    case Subset::Test: return "test";
    }
    return "unknown";
}

using SplitFractions = std::array<double, 4>;

inline constexpr SplitFractions kDefaultFractions = {0.70, 0.10, 0.10, 0.10};

struct SplitAssignment {
    std::map<std::string, Subset> assignment; // group key -> subset
    std::map<std::string, std::string> slice_group; // slice id -> group key
    SplitFractions target_fractions = kDefaultFractions;
    std::vector<std::string> warnings;

    Subset subset_of(const Sample& s) const {
        auto g = slice_group.find(s.slice_id);
        if (g == slice_group.end()) {
            throw Error(ErrorKind::InvalidInput, "slice '" + s.slice_id + "' is not part of the split");
        }
        return assignment.at(g->second);
    }
};

// Group key of one slice: patient id, falling back to series id, then slice id.
inline std::string group_key(const Sample& s) {
    if (!s.patient_id.empty()) return s.patient_id;
    if (!s.series_id.empty()) return s.series_id;
    return s.slice_id;
}

namespace detail {

struct DisjointSets {
    std::vector<std::size_t> parent;
    explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

inline std::vector<std::size_t> present_classes(const Sample& s) {
    std::vector<std::size_t> out;
    if (s.ground_truth) {
        for (const auto& g : *s.ground_truth) {
            if (g.polarity == Polarity::Present) out.push_back(g.label.index);
        }
    }
    return out;
}

inline double l1_to_global(std::span<const double> counts, std::span<const double> global) {
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    if (total <= 0.0) {
        return 0.0;
    }
    double d = 0.0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        d += std::abs(counts[c] / total - global[c]);
    }
    return d;
}

} // namespace detail

// Greedy largest-group-first assignment. Each group goes to the subset, among
// those it still fits into (all of them when it fits nowhere), that minimizes 0.5 * (subset fill relative to its target after adding the group)
// + 0.5 * (increase in that subset's L1 distance from the global class mix).
// Slices sharing a patient id or a series id always stay together. The seed
// only reorders groups of equal size.
inline SplitAssignment split(std::span<const Sample> definite, const SplitFractions& fractions, std::uint64_t seed,
                             const Alphabet& alphabet) {
    if (definite.empty()) {
        throw Error(ErrorKind::InvalidInput, "cannot split an empty dataset");
    }
    double fsum = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0 && f <= 1.0)) {
            throw Error(ErrorKind::InvalidInput, "split fractions must lie in [0,1]");
        }
        fsum += f;
    }
    if (std::abs(fsum - 1.0) > 1e-9) {
        throw Error(ErrorKind::InvalidInput, "split fractions must sum to 1");
    }
    validate_unique_slice_ids(definite);

    const std::size_t n = definite.size();
    const std::size_t k = alphabet.size();

    detail::DisjointSets sets(n);
    std::unordered_map<std::string, std::size_t> first_with;
    auto link = [&](const std::string& token, std::size_t i) {
        auto [it, inserted] = first_with.emplace(token, i);
        if (!inserted) sets.unite(it->second, i);
    };
    for (std::size_t i = 0; i < n; ++i) {
        link("slice\x1f" + definite[i].slice_id, i);
        if (!definite[i].patient_id.empty()) link("patient\x1f" + definite[i].patient_id, i);
        if (!definite[i].series_id.empty()) link("series\x1f" + definite[i].series_id, i);
    }

    struct Group {
        std::string key;
        std::vector<std::size_t> members;
        std::vector<double> class_counts;
    };
    std::map<std::size_t, Group> by_root;
    for (std::size_t i = 0; i < n; ++i) {
        auto& g = by_root[sets.find(i)];
        if (g.class_counts.empty()) g.class_counts.assign(k, 0.0);
        g.members.push_back(i);
        const auto key = group_key(definite[i]);
        if (g.key.empty() || key < g.key) g.key = key;
        for (std::size_t c : detail::present_classes(definite[i])) {
            if (c < k) g.class_counts[c] += 1.0;
        }
    }
    std::vector<Group> groups;
    groups.reserve(by_root.size());
    for (auto& [root, g] : by_root) {
        groups.push_back(std::move(g));
    }
    // Canonical order first so the result does not depend on input order.
    std::sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) { return a.key < b.key; });
    Rng rng(seed);
    rng.shuffle(groups);
    std::stable_sort(groups.begin(), groups.end(),
                     [](const Group& a, const Group& b) { return a.members.size() > b.members.size(); });

    std::vector<double> global(k, 0.0);
    for (const auto& g : groups) {
        for (std::size_t c = 0; c < k; ++c) global[c] += g.class_counts[c];
    }
    const double instances = std::accumulate(global.begin(), global.end(), 0.0);
    if (instances > 0.0) {
        for (double& v : global) v /= instances;
    }

    const double total = static_cast<double>(n);
    const double largest_target = *std::max_element(fractions.begin(), fractions.end()) * total;

    std::array<double, 4> fill{};
    std::array<std::vector<double>, 4> mix;
    for (auto& m : mix) m.assign(k, 0.0);

    SplitAssignment out;
    out.target_fractions = fractions;
    constexpr double kTie = 1e-9;

    for (const auto& g : groups) {
        const double size = static_cast<double>(g.members.size());
        std::size_t choice = 0;
        if (size > largest_target) {
            out.warnings.push_back("group '" + g.key + "' (" + std::to_string(g.members.size()) +
                                   " slices) exceeds every subset target; assigned to training");
        } else {
            // Subsets the group still fits into are preferred outright; the
            // weighted cost only ranks among them.
            bool any_fits = false;
            for (std::size_t s = 0; s < 4; ++s) {
                any_fits = any_fits || (fractions[s] > 0.0 && fill[s] + size <= fractions[s] * total + kTie);
            }
            double best = 0.0;
            bool have = false;
            for (std::size_t s = 0; s < 4; ++s) {
                if (fractions[s] <= 0.0) continue;
                if (any_fits && fill[s] + size > fractions[s] * total + kTie) continue;
                const double fill_ratio = (fill[s] + size) / (fractions[s] * total);
                std::vector<double> after = mix[s];
                for (std::size_t c = 0; c < k; ++c) after[c] += g.class_counts[c];
                const double divergence =
                    detail::l1_to_global(after, global) - detail::l1_to_global(mix[s], global);
                const double cost = 0.5 * fill_ratio + 0.5 * divergence;
                if (!have || cost < best - kTie) {
                    have = true;
                    best = cost;
                    choice = s;
                }
            }
        }
        fill[choice] += size;
        for (std::size_t c = 0; c < k; ++c) mix[choice][c] += g.class_counts[c];
        out.assignment[g.key] = kSubsets[choice];
        for (std::size_t i : g.members) {
            out.slice_group[definite[i].slice_id] = g.key;
        }
    }
    return out;
}

} // namespace mcpdet
