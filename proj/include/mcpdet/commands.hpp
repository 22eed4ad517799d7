#pragma once

// One function per command. Each reads its inputs, runs exactly one library
// operation and writes its artifacts; the executable only parses flags.

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcpdet/calibration.hpp"
#include "mcpdet/datasplit.hpp"
#include "mcpdet/inference.hpp"
#include "mcpdet/io.hpp"
#include "mcpdet/metrics.hpp"
#include "mcpdet/optimizer.hpp"
#include "mcpdet/simulator.hpp"

namespace mcpdet::cli {

namespace fs = std::filesystem;
using io::json;

inline constexpr const char* kOutputDirEnv = "MCPDET_OUTPUT_DIR";

// Default location for an output file when no explicit path was given.
inline fs::path default_output(const std::string& name) {
    const char* dir = std::getenv(kOutputDirEnv);
    return (dir && *dir) ? fs::path(dir) / name : fs::path(name);
}

inline std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline json thresholds_json(const Thresholds& t) { return {{"iou", t.iou}, {"conformal", t.conformal}}; }

// ---- simulate --------------------------------------------------------------

struct SimulateOptions {
    SimConfig config;
    fs::path out;
    fs::path truth_out; // empty: <out>.truth.jsonl
};

inline fs::path truth_path_for(const fs::path& dataset) {
    fs::path p = dataset;
    p += ".truth.jsonl";
    return p;
}

inline std::string format_generator_truth(const SimCorpus& corpus) {
    std::string out;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        out += json{{"slice_id", corpus.samples[i].slice_id}, {"ambiguous", bool(corpus.ambiguous[i])}}.dump();
        out += '\n';
    }
    return out;
}

inline std::map<std::string, bool> read_generator_truth(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open generator truth '" + path.string() + "'");
    std::map<std::string, bool> out;
    io::for_each_line(in, [&](const json& j) {
        const auto& flag = io::detail::field(j, "ambiguous");
        if (!flag.is_boolean()) throw Error(ErrorKind::Parse, "field 'ambiguous' must be a boolean");
        out[io::detail::string_field(j, "slice_id")] = flag.get<bool>();
    });
    return out;
}

inline void cmd_simulate(const SimulateOptions& opt) {
    opt.config.validate();
    const auto corpus = generate(opt.config);
    io::write_dataset(opt.out, corpus.samples, opt.config.alphabet);
    io::write_text(opt.truth_out.empty() ? truth_path_for(opt.out) : opt.truth_out, format_generator_truth(corpus));
}

// ---- split -----------------------------------------------------------------

struct SplitOptions {
    fs::path in;
    fs::path out_dir;
    SplitFractions fractions = kDefaultFractions;
    std::uint64_t seed = 0;
    Alphabet alphabet;
    // Reader-negative samples join the split alongside the definite ones.
    bool include_negative = false;
};

inline json partition_json(const PartitionResult& p, const Alphabet& alphabet) {
    json definite = json::array();
    for (const auto& e : p.definite) {
        json consensus = json::object();
        for (const auto& [label, pol] : e.consensus) consensus[alphabet.name(label)] = std::string(to_string(pol));
        definite.push_back({{"slice_id", e.sample.slice_id}, {"consensus", std::move(consensus)}});
    }
    json challenging = json::array();
    for (const auto& e : p.challenging) {
        json disputed = json::array();
        for (const auto& l : e.disputed) disputed.push_back(alphabet.name(l));
        challenging.push_back(
            {{"slice_id", e.sample.slice_id}, {"disputed", std::move(disputed)}, {"reason", e.reason}});
    }
    json negative = json::array();
    for (const auto& s : p.negative) negative.push_back(s.slice_id);
    json excluded = json::array();
    for (const auto& e : p.excluded) excluded.push_back({{"slice_id", e.sample.slice_id}, {"reason", e.reason}});
    return {{"definite", std::move(definite)},
            {"challenging", std::move(challenging)},
            {"negative", std::move(negative)},
            {"excluded", std::move(excluded)}};
}

inline void cmd_split(const SplitOptions& opt) {
    const auto samples = io::read_dataset(opt.in, opt.alphabet);
    const auto parts = partition(samples, opt.alphabet);

    std::vector<Sample> pool;
    for (const auto& e : parts.definite) pool.push_back(e.sample);
    if (opt.include_negative) {
        pool.insert(pool.end(), parts.negative.begin(), parts.negative.end());
    }
    const auto assignment = split(pool, opt.fractions, opt.seed, opt.alphabet);

    std::map<Subset, std::vector<Sample>> subsets;
    for (const auto& s : pool) subsets[assignment.subset_of(s)].push_back(s);

    json fractions = json::object();
    json counts = json::object();
    for (std::size_t i = 0; i < kSubsets.size(); ++i) {
        const std::string name(to_string(kSubsets[i]));
        fractions[name] = opt.fractions[i];
        counts[name] = subsets[kSubsets[i]].size();
    }
    json groups = json::object();
    for (const auto& [key, subset] : assignment.assignment) groups[key] = std::string(to_string(subset));
    const json manifest = {{"seed", opt.seed},
                           {"fractions", std::move(fractions)},
                           {"slice_counts", std::move(counts)},
                           {"groups", std::move(groups)},
                           {"warnings", assignment.warnings},
                           {"dataset_sha256", io::sha256_file(opt.in)}};

    io::write_text(opt.out_dir / "partition.json", partition_json(parts, opt.alphabet).dump(2) + "\n");
    io::write_text(opt.out_dir / "split.json", manifest.dump(2) + "\n");
    for (Subset s : kSubsets) {
        io::write_dataset(opt.out_dir / (std::string(to_string(s)) + ".jsonl"), subsets[s], opt.alphabet);
    }
}

// ---- calibrate -------------------------------------------------------------

struct CalibrateOptions {
    fs::path in;
    fs::path out;
    Alphabet alphabet;
    std::string timestamp; // empty: current UTC time
};

inline CalibrationModel cmd_calibrate(const CalibrateOptions& opt) {
    const auto samples = io::read_dataset(opt.in, opt.alphabet);
    auto model = calibrate(samples, opt.alphabet, opt.timestamp.empty() ? utc_now() : opt.timestamp);
    io::write_model(opt.out, model);
    return model;
}

// ---- predict ---------------------------------------------------------------

struct PredictOptions {
    fs::path in;
    fs::path model;
    fs::path out;
    double iou_threshold = 0.5;
    double conformal_threshold = 0.5;
    bool cross_cluster = false;
};

inline void cmd_predict(const PredictOptions& opt) {
    validate_threshold(opt.iou_threshold, "IoU");
    validate_threshold(opt.conformal_threshold, "conformal");
    const auto model = io::read_model(opt.model);
    const auto samples = io::read_dataset(opt.in, model.alphabet());
    InferenceOptions inference;
    inference.cross_cluster_presence = opt.cross_cluster;
    std::vector<SampleResult> results;
    results.reserve(samples.size());
    for (const auto& s : samples) {
        results.push_back(infer(s, model, opt.iou_threshold, opt.conformal_threshold, inference));
    }
    io::write_text(opt.out, io::format_results(results, model.alphabet()));
}

// ---- evaluate --------------------------------------------------------------

struct EvaluateOptions {
    fs::path results;
    fs::path dataset;
    fs::path out_json;
    fs::path out_csv;
    std::optional<fs::path> model;        // alphabet source and provenance hash
    std::optional<fs::path> generator_truth;
    std::vector<Regime> regimes{std::begin(kAllRegimes), std::end(kAllRegimes)};
    double map_iou = 0.95;
    Alphabet alphabet;
};

// Reader disagreement on any class marks a sample as truly challenging.
inline bool readers_disagree(const Sample& s) {
    if (!s.readers || s.readers->size() < 2) return false;
    const auto& first = s.readers->front().labels;
    for (const auto& r : *s.readers) {
        if (r.labels != first) return true;
    }
    return false;
}

inline json cmd_evaluate(const EvaluateOptions& opt) {
    if (opt.regimes.empty()) throw Error(ErrorKind::InvalidRegime, "no regimes requested");
    if (!(opt.map_iou >= 0.0 && opt.map_iou <= 1.0)) throw Error(ErrorKind::InvalidInput, "match IoU must lie in [0,1]");

    std::optional<CalibrationModel> model;
    if (opt.model) model = io::read_model(*opt.model);
    const Alphabet alphabet = model ? model->alphabet() : opt.alphabet;

    const auto samples = io::read_dataset(opt.dataset, alphabet);
    const auto results = io::read_results(opt.results, alphabet);
    std::map<std::string, const Sample*> by_id;
    for (const auto& s : samples) by_id[s.slice_id] = &s;

    std::vector<std::vector<GroundTruthLabel>> truths;
    std::vector<const Sample*> aligned;
    for (const auto& r : results) {
        auto it = by_id.find(r.slice_id);
        if (it == by_id.end()) {
            throw Error(ErrorKind::EvaluationInput, "result for unknown slice '" + r.slice_id + "'");
        }
        if (!it->second->ground_truth) {
            throw Error(ErrorKind::EvaluationInput, "slice '" + r.slice_id + "' has no ground truth");
        }
        truths.push_back(*it->second->ground_truth);
        aligned.push_back(it->second);
    }

    json reports = json::array();
    std::string csv(io::kCsvHeader);
    csv += '\n';
    std::vector<Regime> seen;
    for (Regime reg : opt.regimes) {
        if (std::find(seen.begin(), seen.end(), reg) != seen.end()) continue;
        seen.push_back(reg);
        const auto report = evaluate(results, truths, reg, alphabet);
        reports.push_back(io::to_json(report));
        csv += io::csv_row(report);
        csv += '\n';
    }

    const auto ap = mean_average_precision(results, truths, opt.map_iou, alphabet);
    json per_class = json::object();
    for (std::size_t c = 0; c < alphabet.size(); ++c) {
        per_class[alphabet.name(ClassLabel{c})] = io::optional_number(ap.per_class[c]);
    }

    json challenging = nullptr;
    std::optional<std::vector<bool>> truly;
    std::string reference;
    if (opt.generator_truth) {
        const auto flags = read_generator_truth(*opt.generator_truth);
        truly.emplace();
        for (const auto& r : results) {
            auto it = flags.find(r.slice_id);
            if (it == flags.end()) {
                throw Error(ErrorKind::EvaluationInput, "generator truth has no entry for '" + r.slice_id + "'");
            }
            truly->push_back(it->second);
        }
        reference = "generator-truth";
    } else if (std::all_of(aligned.begin(), aligned.end(), [](const Sample* s) { return s->readers.has_value(); })) {
        truly.emplace();
        for (const Sample* s : aligned) truly->push_back(readers_disagree(*s));
        reference = "reader-disagreement";
    }
    if (truly && !results.empty()) {
        const auto a = flag_agreement(results, *truly);
        challenging = {{"reference", reference},
                       {"samples", a.samples},
                       {"truly_challenging", a.truly_challenging},
                       {"flagged_challenging", a.flagged_challenging},
                       {"false_flags", a.false_flags},
                       {"identification_accuracy", io::optional_number(a.identification_rate())},
                       {"agreement_accuracy", a.accuracy()},
                       {"false_flag_rate", io::optional_number(a.false_flag_rate())}};
    }

    json provenance = {{"thresholds", results.empty() ? json(nullptr) : thresholds_json(results.front().thresholds)},
                       {"dataset_sha256", io::sha256_file(opt.dataset)},
                       {"results_sha256", io::sha256_file(opt.results)},
                       {"model_sha256", opt.model ? json(io::sha256_file(*opt.model)) : json(nullptr)}};

    json doc = {{"provenance", std::move(provenance)},
                {"samples", results.size()},
                {"reports", std::move(reports)},
                {"map", {{"match_iou", opt.map_iou}, {"per_class", std::move(per_class)},
                         {"mean", io::optional_number(ap.mean)}}},
                {"challenging", std::move(challenging)}};
    io::write_text(opt.out_json, doc.dump(2) + "\n");
    io::write_text(opt.out_csv, csv);
    return doc;
}

// ---- optimize --------------------------------------------------------------

struct OptimizeOptions {
    fs::path in;
    fs::path model;
    fs::path out_csv;
    fs::path out_json;
    ThresholdGrid grid = ThresholdGrid::standard();
    std::vector<Regime> regimes{std::begin(kAllRegimes), std::end(kAllRegimes)};
    bool cross_cluster = false;
    unsigned threads = 1;
};

inline json selection_json(std::span<const GridCell> cells, Regime reg) {
    const auto spec = MatchSpec::for_regime(reg);
    try {
        if (spec.defines_tn() && spec.defines_fn()) {
            const auto s = select_by_auroc(cells, reg);
            return {{"rule", "auroc"}, {"iou_threshold", s.iou_threshold},
                    {"conformal_threshold", s.conformal_threshold}, {"auroc", s.auroc}, {"youden", s.youden}};
        }
        const auto s = select_by_ppv(cells, reg);
        return {{"rule", "ppv"}, {"iou_threshold", s.iou_threshold},
                {"conformal_threshold", s.conformal_threshold}, {"ppv", s.ppv}, {"tp", s.tp}};
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoSelection) throw;
        return {{"error", io::error_record(e)["error"]}};
    }
}

inline std::vector<GridCell> cmd_optimize(const OptimizeOptions& opt) {
    opt.grid.validate();
    if (opt.regimes.empty()) throw Error(ErrorKind::InvalidRegime, "no regimes requested");
    const auto model = io::read_model(opt.model);
    const auto samples = io::read_dataset(opt.in, model.alphabet());

    SweepOptions sweep_opt;
    sweep_opt.inference.cross_cluster_presence = opt.cross_cluster;
    sweep_opt.threads = opt.threads;
    const auto cells = sweep(samples, model, opt.grid, opt.regimes, sweep_opt);

    std::vector<Regime> regimes;
    for (Regime r : opt.regimes) {
        if (std::find(regimes.begin(), regimes.end(), r) == regimes.end()) regimes.push_back(r);
    }
    json selections = json::object();
    for (Regime r : regimes) selections[std::string(to_string(r))] = selection_json(cells, r);

    const json doc = {{"provenance",
                       {{"dataset_sha256", io::sha256_file(opt.in)},
                        {"model_sha256", io::sha256_file(opt.model)},
                        {"grid", {{"iou_values", opt.grid.iou_values}, {"conformal_values", opt.grid.conformal_values}}},
                        {"cross_cluster", opt.cross_cluster}}},
                      {"cells", cells.size()},
                      {"selections", std::move(selections)}};
    io::write_text(opt.out_csv, io::format_grid_csv(cells, regimes));
    io::write_text(opt.out_json, doc.dump(2) + "\n");
    return cells;
}

} // namespace mcpdet::cli
